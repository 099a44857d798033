use spectranet::model::{predict_logits, BackboneConfig, BnStatus, FrameSet, Mode, Model, ParameterVector};
use spectranet::rng::rng_from_seed;
use spectranet_autodiff::{softmax_rows, Tape, Tensor};

fn probe(cfg: &BackboneConfig, n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = rng_from_seed(seed);
    let len = n * cfg.input_height * cfg.input_width;
    let data = (0..len).map(|_| rand::Rng::random_range(&mut rng, 100.0f32..200.0)).collect();
    Tensor::new(vec![n, 1, cfg.input_height, cfg.input_width], data).unwrap()
}

fn small() -> BackboneConfig {
    BackboneConfig {
        stage_widths: vec![4, 8],
        blocks_per_stage: vec![1, 1],
        n_classes: 3,
        ..Default::default()
    }
}

#[test]
fn desk_parameter_count_is_pinned() {
    let cfg = BackboneConfig::default();
    let m = Model::build(&cfg, 0).unwrap();
    // stem, then per block two 3x3 convs and two norms, plus 1x1 projections where widths change
    let conv3 = |cin: usize, cout: usize| cout * cin * 9;
    let bn = |c: usize| 2 * c;
    let stem = 16 * 7 * 49 + bn(16);
    let stage0 = 2 * (2 * conv3(16, 16) + 2 * bn(16));
    let stage1 = conv3(16, 32) + conv3(32, 32) + 2 * bn(32) + 16 * 32 + bn(32) + 2 * conv3(32, 32) + 2 * bn(32);
    let stage2 = conv3(32, 64) + conv3(64, 64) + 2 * bn(64) + 32 * 64 + bn(64) + 2 * conv3(64, 64) + 2 * bn(64);
    let head = 64 * 9 + 9;
    assert_eq!(m.param_count(), stem + stage0 + stage1 + stage2 + head);
    assert_eq!(m.param_count(), 180_249);
}

#[test]
fn desk_logits_have_batch_by_class_shape() {
    let cfg = BackboneConfig::default();
    let m = Model::build(&cfg, 1).unwrap();
    let out = m.logits(&probe(&cfg, 3, 2), Mode::Eval, &mut rng_from_seed(0)).unwrap();
    assert_eq!(out.shape(), &[3, 9]);
    assert!(out.data().iter().all(|v| v.is_finite()));
}

#[test]
fn full_size_stem_output_is_100_by_112() {
    assert_eq!(BackboneConfig::full_size(9).stem_output().unwrap(), (100, 112));
}

#[test]
fn too_small_input_is_a_shape_error() {
    let cfg = BackboneConfig {
        input_width: 0,
        ..Default::default()
    };
    assert!(Model::build(&cfg, 0).is_err());
}

#[test]
fn build_is_deterministic() {
    let cfg = small();
    assert_eq!(Model::build(&cfg, 5).unwrap().flatten(), Model::build(&cfg, 5).unwrap().flatten());
    assert_ne!(Model::build(&cfg, 5).unwrap().flatten(), Model::build(&cfg, 6).unwrap().flatten());
}

#[test]
fn eval_is_deterministic_and_mc_without_dropout_matches_it() {
    let mut cfg = small();
    let x = probe(&cfg, 2, 3);
    let m = Model::build(&cfg, 1).unwrap();
    let a = m.logits(&x, Mode::Eval, &mut rng_from_seed(1)).unwrap();
    let b = m.logits(&x, Mode::Eval, &mut rng_from_seed(2)).unwrap();
    assert_eq!(a, b);
    cfg.dropout_rate = 0.0;
    let m0 = Model::build(&cfg, 1).unwrap();
    let e = m0.logits(&x, Mode::Eval, &mut rng_from_seed(1)).unwrap();
    for s in 0..5 {
        assert_eq!(m0.logits(&x, Mode::McInfer, &mut rng_from_seed(s)).unwrap(), e);
    }
}

#[test]
fn mc_infer_mean_softmax_is_normalized() {
    let cfg = small();
    let m = Model::build(&cfg, 1).unwrap();
    let x = probe(&cfg, 1, 4);
    let mut rng = rng_from_seed(8);
    let mut mean = vec![0.0; cfg.n_classes];
    let mut distinct = std::collections::HashSet::new();
    for _ in 0..100 {
        let l = m.logits(&x, Mode::McInfer, &mut rng).unwrap();
        distinct.insert(l.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        for (acc, p) in mean.iter_mut().zip(softmax_rows(l.data(), cfg.n_classes)) {
            *acc += p / 100.0;
        }
    }
    assert!((mean.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(distinct.len() > 1, "dropout should perturb the logits");
}

#[test]
fn logits_are_invariant_to_affine_pixel_maps() {
    let cfg = small();
    let m = Model::build(&cfg, 2).unwrap();
    let x = probe(&cfg, 2, 5);
    let y = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| 3.5 * v + 40.0).collect()).unwrap();
    let a = m.logits(&x, Mode::Eval, &mut rng_from_seed(0)).unwrap();
    let b = m.logits(&y, Mode::Eval, &mut rng_from_seed(0)).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() <= 1e-5 * p.abs().max(1.0), "{p} vs {q}");
    }
}

#[test]
fn flatten_round_trip_preserves_logits() {
    let cfg = small();
    let src = Model::build(&cfg, 3).unwrap();
    let x = probe(&cfg, 2, 6);
    let mut dst = Model::build(&cfg, 4).unwrap();
    dst.unflatten(&src.flatten()).unwrap();
    assert_eq!(dst.bn_status(), BnStatus::Stale);
    assert_eq!(
        dst.logits(&x, Mode::Eval, &mut rng_from_seed(0)).unwrap(),
        src.logits(&x, Mode::Eval, &mut rng_from_seed(0)).unwrap()
    );
}

#[test]
fn averaged_weights_give_finite_logits() {
    let cfg = small();
    let (a, b) = (Model::build(&cfg, 1).unwrap(), Model::build(&cfg, 2).unwrap());
    let (fa, fb) = (a.flatten(), b.flatten());
    let avg = ParameterVector::new(
        fa.layout.clone(),
        fa.values.iter().zip(&fb.values).map(|(x, y)| 0.5 * (x + y)).collect(),
    )
    .unwrap();
    let mut m = a.clone();
    m.unflatten(&avg).unwrap();
    let out = m.logits(&probe(&cfg, 2, 1), Mode::Eval, &mut rng_from_seed(0)).unwrap();
    assert!(out.data().iter().all(|v| v.is_finite()));
}

#[test]
fn layout_mismatch_is_rejected() {
    let a = Model::build(&small(), 1).unwrap();
    let mut b = Model::build(&BackboneConfig::default(), 1).unwrap();
    assert!(b.unflatten(&a.flatten()).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small();
    let mut m = Model::build(&cfg, 9).unwrap();
    let x = probe(&cfg, 4, 2);
    let mut tape = Tape::<f32>::new();
    let fwd = m.forward_on(&mut tape, &x, Mode::Train, false, &mut rng_from_seed(0)).unwrap();
    m.update_running_stats(&fwd.batch_stats).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.spck");
    m.to_checkpoint().save(&path).unwrap();
    let back = Model::from_checkpoint(&spectranet_autodiff::Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.flatten(), m.flatten());
    let a = m.logits(&x, Mode::Eval, &mut rng_from_seed(0)).unwrap();
    let b = back.logits(&x, Mode::Eval, &mut rng_from_seed(0)).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 1e-4);
    }
}

#[test]
fn whole_network_gradient_matches_finite_differences() {
    // f64 tape over a tiny network, batch statistics on, dropout off
    let cfg = BackboneConfig {
        input_height: 8,
        input_width: 60,
        stage_widths: vec![2, 3],
        blocks_per_stage: vec![1, 1],
        dropout_rate: 0.0,
        n_classes: 3,
        ..Default::default()
    };
    let model = Model::build(&cfg, 11).unwrap();
    let x = probe(&cfg, 3, 12);
    let labels = [0usize, 2, 1];
    let loss = |m: &Model| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::<f64>::new();
        let fwd = m.forward_on(&mut tape, &x, Mode::Refresh, true, &mut rng_from_seed(0)).unwrap();
        let l = tape.softmax_xent(fwd.logits, &labels).unwrap();
        tape.backward(l).unwrap();
        let v = tape.value(l).data()[0];
        (v, fwd.params.iter().map(|&p| tape.grad(p).unwrap().to_vec()).collect())
    };
    let (_, grads) = loss(&model);
    let flat = model.flatten();
    let mut worst: f64 = 0.0;
    // small step: the tiny network has many activations near a ReLU kink
    let h = 1e-5;
    for (pi, e) in flat.layout.entries.iter().enumerate() {
        for k in [0, e.len() / 2, e.len() - 1] {
            let mut plus = flat.clone();
            plus.values[e.offset + k] += h;
            let mut minus = flat.clone();
            minus.values[e.offset + k] -= h;
            let mut mp = model.clone();
            mp.unflatten(&plus).unwrap();
            let mut mm = model.clone();
            mm.unflatten(&minus).unwrap();
            // f32 parameter storage: use the perturbations actually applied
            let dp = mp.params()[pi].data()[k] as f64 - model.params()[pi].data()[k] as f64;
            let dm = model.params()[pi].data()[k] as f64 - mm.params()[pi].data()[k] as f64;
            let numeric = (loss(&mp).0 - loss(&mm).0) / (dp + dm);
            let analytic = grads[pi][k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3, "worst relative gradient error {worst}");
}

#[test]
fn frameset_batches_in_order() {
    let set = FrameSet {
        height: 1,
        width: 2,
        pixels: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        labels: vec![0, 1, 2],
        dnmed: vec![10.0, 20.0, 30.0],
    };
    assert_eq!(set.batch(&[2, 0]).data(), &[5.0, 6.0, 1.0, 2.0]);
    let sub = set.subset(&[1]);
    assert_eq!((sub.labels.clone(), sub.dnmed.clone()), (vec![1], vec![20.0]));
    let cfg = BackboneConfig {
        input_height: 1,
        input_width: 2,
        ..small()
    };
    let logits = predict_logits(&Model::build(&cfg, 0).unwrap(), &set, Mode::Eval, 2, &mut rng_from_seed(0)).unwrap();
    assert_eq!(logits.len(), 3 * 3);
}
