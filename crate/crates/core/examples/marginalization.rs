//! MC-dropout, SWA and SWAG predictions from one training run, with
//! per-class median and quartiles for a single frame.

use spectranet::bayes::{bn_refresh, ensemble_predict, mc_dropout_predict, point_predict, Member, Source};
use spectranet::eval::{argmax, records_from, top_k_accuracy, TemperMode};
use spectranet::experiment::{train_model, TrainingSpec};
use spectranet::manifest::Split;
use spectranet::model::{BackboneConfig, FrameSet};
use spectranet::rng::rng_from_seed;
use spectranet::sim::{generate_dataset, DatasetSpec};

fn main() -> spectranet::Result<()> {
    let dir = std::env::temp_dir().join("spectranet-marginalization-example");
    let _ = std::fs::remove_dir_all(&dir);
    let spec = DatasetSpec {
        n_classes: 3,
        examples_per_class: 100,
        seed: 4,
        ..Default::default()
    };
    let classes = spec.class_library()?;
    let names = spec.label_names(&classes);
    let train = FrameSet::from_manifest(&generate_dataset(&spec, &classes, dir.join("train"))?, &names)?;
    let test_spec = DatasetSpec {
        examples_per_class: 20,
        seed: 5,
        ..spec.clone()
    };
    let test = FrameSet::from_manifest(&generate_dataset(&test_spec, &classes, dir.join("test"))?, &names)?;

    let backbone = BackboneConfig {
        stage_widths: vec![8, 16, 32],
        blocks_per_stage: vec![1, 1, 1],
        n_classes: names.len(),
        ..Default::default()
    };
    let training = TrainingSpec {
        epochs: 20,
        swa_fraction: 0.3,
        ..Default::default()
    };
    let out = train_model(&backbone, &training, &train)?;

    let mut swa = out.model.clone();
    swa.unflatten(&out.swa.mean)?;
    bn_refresh(&mut swa, &train, 64)?;

    let sets = [
        ("point", point_predict(&out.model, &test, 64)?),
        ("dropout", mc_dropout_predict(&out.model, &test, 50, 64, &mut rng_from_seed(1))?),
        ("swa", ensemble_predict(&[Member::Swa(&swa)], &test, Source::Swa, 64, 2)?),
        (
            "swag",
            ensemble_predict(
                &[Member::Swag {
                    base: &out.model,
                    state: &out.swag,
                    scale: 0.25,
                    n_samples: 10,
                    refresh: &train,
                }],
                &test,
                Source::Swag,
                64,
                3,
            )?,
        ),
    ];
    for (name, preds) in &sets {
        let recs = records_from(preds, &test.labels, &test.dnmed, Split::Test, 1.0, TemperMode::Member)?;
        println!("{name:>8}: {} members, Top-1 {:.3}", preds[0].n_members(), top_k_accuracy(&recs, 1)?);
    }
    let d = &sets[1].1[0];
    let (q1, med, q3) = (d.quantile(0.25), d.median(), d.quantile(0.75));
    println!("dropout on frame 0 (true {}, predicted {}):", names[test.labels[0]], names[argmax(&d.mean())]);
    for (c, name) in names.iter().enumerate() {
        println!("  {name:>6}: median {:.3} [{:.3}, {:.3}]", med[c], q1[c], q3[c]);
    }
    Ok(())
}
