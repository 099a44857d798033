//! Run a recipe through the staged pipeline from Rust instead of the CLI.
//!
//! cargo run --release --example reproduce -- <recipe> [config.json] [out_dir]

use spectranet::experiment::{reproduce, ExperimentConfig, Recipe, Runner};

fn main() -> spectranet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let recipe: Recipe = args.next().unwrap_or_else(|| "table4".into()).parse()?;
    let cfg = match args.next() {
        Some(p) => ExperimentConfig::load(p)?,
        None => quick_config(),
    };
    let out = args.next().unwrap_or_else(|| format!("target/reproduce-{}", recipe.name()));
    let mut runner = Runner::new(cfg, &out)?;
    reproduce(&mut runner, recipe)?;
    for stage in &runner.manifest.stages {
        println!("{:<28} {:>7.1}s{}", stage.name, stage.seconds, if stage.cached { "  cached" } else { "" });
    }
    println!("reports in {out}/reports/{}", recipe.name());
    Ok(())
}

/// Three classes, two sizes, a narrow network: minutes rather than hours.
fn quick_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: "quick".into(),
        sizes: vec![30, 60],
        ..Default::default()
    };
    cfg.dataset.n_classes = 3;
    cfg.backbone.n_classes = 3;
    cfg.backbone.stage_widths = vec![8, 16];
    cfg.backbone.blocks_per_stage = vec![1, 1];
    cfg.training.epochs = 8;
    cfg.training.swa_fraction = 0.25;
    cfg.marginalization.n_models = 3;
    cfg.marginalization.dropout_samples = 30;
    cfg.marginalization.swag_samples = 5;
    cfg.marginalization.swag_refresh_frames = Some(64);
    cfg.eval.holdout_per_class = 30;
    cfg
}
