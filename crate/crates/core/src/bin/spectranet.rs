use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spectranet::experiment::{reproduce, ExperimentConfig, Recipe, Runner};
use spectranet::metrics::{dn_med, DnMedConfig};
use spectranet::sim::Frame;
use spectranet::Result;

#[derive(Parser)]
#[command(name = "spectranet", version, about = "Satellite spectra simulation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/desk")]
    out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensemble members.
    #[arg(long)]
    workers: Option<usize>,
    /// Serial execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the training pools and held-out sets.
    Simulate(RunArgs),
    /// Subset, cut on DN_med and split.
    Curate(RunArgs),
    /// Train the members the configured method needs.
    Train(RunArgs),
    /// Write reports for the configured method.
    Eval(RunArgs),
    /// Run every stage a recipe needs and write its reports.
    Reproduce {
        /// table2 | figure4 | table4 | table5 | table6 | figure6 | figure7 | all
        recipe: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Print the DN_med report of a frame file as JSON.
    Dnmed {
        frame: PathBuf,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        #[arg(long, default_value_t = 1.5)]
        psf_sigma: f64,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn runner(a: &RunArgs) -> Result<Runner> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if a.deterministic {
        cfg.workers = 1;
    }
    Runner::new(cfg, &a.out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => runner(&a)?.simulate(),
        Command::Curate(a) => runner(&a)?.curate(),
        Command::Train(a) => {
            let mut r = runner(&a)?;
            let runs = r.default_runs();
            r.train(&runs)
        }
        Command::Eval(a) => runner(&a)?.evaluate(),
        Command::Reproduce { recipe, args } => {
            let recipe: Recipe = recipe.parse()?;
            reproduce(&mut runner(&args)?, recipe)
        }
        Command::Dnmed {
            frame,
            degree,
            psf_sigma,
        } => {
            let cfg = DnMedConfig {
                poly_degree: degree,
                psf_sigma,
                ..Default::default()
            };
            let rep = dn_med(&Frame::load(frame)?, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(())
        }
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
