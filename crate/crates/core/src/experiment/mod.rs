//! Declarative experiment orchestration.

pub mod config;
pub mod reproduce;
pub mod runner;
pub mod train;

pub use config::{EvalSpec, ExperimentConfig, MarginalizationSpec, Method, TemperatureGrid};
pub use reproduce::{reproduce, Recipe};
pub use runner::{RunKey, RunManifest, Runner, Scored, StageRecord};
pub use train::{train_model, EpochStats, TrainOutput, TrainingSpec};
