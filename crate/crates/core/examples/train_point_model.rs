//! Train a small classifier on simulated frames and score it on a held-out set.

use spectranet::bayes::point_predict;
use spectranet::eval::{confusion_matrix, records_from, top_k_accuracy, TemperMode};
use spectranet::experiment::{train_model, TrainingSpec};
use spectranet::manifest::Split;
use spectranet::model::{BackboneConfig, FrameSet};
use spectranet::sim::{generate_dataset, DatasetSpec};

fn main() -> spectranet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("debug")).init();
    let dir = tempfile_dir();
    let spec = DatasetSpec {
        n_classes: 4,
        examples_per_class: 60,
        seed: 1,
        ..Default::default()
    };
    let classes = spec.class_library()?;
    let names = spec.label_names(&classes);
    let train = FrameSet::from_manifest(&generate_dataset(&spec, &classes, dir.join("train"))?, &names)?;
    let test_spec = DatasetSpec {
        examples_per_class: 30,
        seed: 2,
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
        epochs: 10,
        ..Default::default()
    };
    let out = train_model(&backbone, &training, &train)?;
    let preds = point_predict(&out.model, &test, 64)?;
    let recs = records_from(&preds, &test.labels, &test.dnmed, Split::Test, 1.0, TemperMode::Member)?;
    println!("{} parameters", out.model.param_count());
    println!("held-out Top-1 {:.3}", top_k_accuracy(&recs, 1)?);
    for (name, row) in names.iter().zip(confusion_matrix(&recs)?.counts) {
        println!("{name:>6} {row:?}");
    }
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join("spectranet-train-example");
    let _ = std::fs::remove_dir_all(&d);
    d
}
