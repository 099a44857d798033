use std::sync::Arc;

use spectranet::bayes::{bn_refresh, ensemble_predict, mc_dropout_predict, point_predict, Member, Source, SwagState};
use spectranet::model::{BackboneConfig, BnStatus, FrameSet, Model};
use spectranet::rng::rng_from_seed;

fn cfg() -> BackboneConfig {
    BackboneConfig {
        input_height: 8,
        input_width: 60,
        stage_widths: vec![3, 4],
        blocks_per_stage: vec![1, 1],
        n_classes: 3,
        ..Default::default()
    }
}

fn frames(n: usize, seed: u64) -> FrameSet {
    let c = cfg();
    let mut rng = rng_from_seed(seed);
    FrameSet {
        height: c.input_height,
        width: c.input_width,
        pixels: (0..n * c.input_height * c.input_width)
            .map(|_| rand::Rng::random_range(&mut rng, 50.0f32..400.0))
            .collect(),
        labels: (0..n).map(|i| i % 3).collect(),
        dnmed: vec![100.0; n],
    }
}

fn averaged(a: &Model, b: &Model) -> Model {
    let (fa, fb) = (a.flatten(), b.flatten());
    let mut avg = fa.clone();
    for (v, w) in avg.values.iter_mut().zip(&fb.values) {
        *v = 0.5 * (*v + w);
    }
    let mut m = a.clone();
    m.unflatten(&avg).unwrap();
    m
}

#[test]
fn stale_swa_member_is_refused_until_refreshed() {
    let set = frames(9, 1);
    let mut swa = averaged(&Model::build(&cfg(), 1).unwrap(), &Model::build(&cfg(), 2).unwrap());
    assert_eq!(swa.bn_status(), BnStatus::Stale);
    assert!(ensemble_predict(&[Member::Swa(&swa)], &set, Source::Swa, 4, 0).is_err());
    bn_refresh(&mut swa, &set, 4).unwrap();
    assert_eq!(swa.bn_status(), BnStatus::Refreshed);
    let p = ensemble_predict(&[Member::Swa(&swa)], &set, Source::Swa, 4, 0).unwrap();
    assert_eq!(p.len(), 9);
    assert_eq!(p[0].n_members(), 1);
}

#[test]
fn refresh_is_deterministic_and_idempotent() {
    let set = frames(11, 2);
    let mut a = averaged(&Model::build(&cfg(), 3).unwrap(), &Model::build(&cfg(), 4).unwrap());
    bn_refresh(&mut a, &set, 4).unwrap();
    let once = point_predict(&a, &set, 5).unwrap();
    bn_refresh(&mut a, &set, 4).unwrap();
    let twice = point_predict(&a, &set, 5).unwrap();
    for (x, y) in once.iter().zip(&twice) {
        assert_eq!(x.mean(), y.mean());
    }
    assert!(bn_refresh(&mut a, &frames(1, 3), 4).is_err());
}

#[test]
fn prediction_ignores_batch_size() {
    let set = frames(7, 4);
    let m = Model::build(&cfg(), 5).unwrap();
    let a = point_predict(&m, &set, 2).unwrap();
    let b = point_predict(&m, &set, 7).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.mean().iter().zip(y.mean()) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}

#[test]
fn dropout_members_pool_every_pass() {
    let set = frames(4, 5);
    let m = Model::build(&cfg(), 6).unwrap();
    let d = mc_dropout_predict(&m, &set, 12, 4, &mut rng_from_seed(0)).unwrap();
    assert!(d.iter().all(|p| p.n_members() == 12));
    assert!(mc_dropout_predict(&m, &set, 0, 4, &mut rng_from_seed(0)).is_err());
    let e = ensemble_predict(
        &[Member::Dropout { model: &m, n_samples: 3 }, Member::Point(&m)],
        &set,
        Source::Dropout,
        4,
        1,
    )
    .unwrap();
    assert!(e.iter().all(|p| p.n_members() == 4));
    assert!(ensemble_predict(&[], &set, Source::Point, 4, 0).is_err());
}

#[test]
fn zero_scale_swag_matches_refreshed_swa() {
    let set = frames(10, 6);
    let (a, b) = (Model::build(&cfg(), 7).unwrap(), Model::build(&cfg(), 8).unwrap());
    let layout = Arc::clone(a.layout());
    let mut state = SwagState::new(layout, 4);
    state.update(&a.flatten()).unwrap();
    state.update(&b.flatten()).unwrap();
    let mut swa = averaged(&a, &b);
    bn_refresh(&mut swa, &set, 4).unwrap();
    let want = point_predict(&swa, &set, 4).unwrap();
    let got = ensemble_predict(
        &[Member::Swag {
            base: &a,
            state: &state,
            scale: 0.0,
            n_samples: 3,
            refresh: &set,
        }],
        &set,
        Source::Swag,
        4,
        0,
    )
    .unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.n_members(), 3);
        for (p, q) in g.mean().iter().zip(w.mean()) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }
}
