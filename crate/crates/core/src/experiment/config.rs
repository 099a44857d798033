use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::TrainingSpec;
use crate::error::{Error, Result};
use crate::eval::TemperMode;
use crate::metrics::SplitAssignment;
use crate::model::BackboneConfig;
use crate::sim::{DatasetSpec, OrientationPolicy};

/// How predictions are marginalized over weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Point,
    Dropout,
    Swa,
    Swag,
    MultiSwa,
    MultiSwag,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Point,
        Method::Dropout,
        Method::Swa,
        Method::Swag,
        Method::MultiSwa,
        Method::MultiSwag,
    ];

    pub fn is_multi(self) -> bool {
        matches!(self, Method::MultiSwa | Method::MultiSwag)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Point => "point",
            Method::Dropout => "dropout",
            Method::Swa => "swa",
            Method::Swag => "swag",
            Method::MultiSwa => "multi_swa",
            Method::MultiSwag => "multi_swag",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginalizationSpec {
    pub method: Method,
    /// Independently trained models in a multi-SWA or multi-SWAG ensemble.
    pub n_models: usize,
    pub dropout_samples: usize,
    pub swag_scale: f64,
    /// Posterior samples drawn per model.
    pub swag_samples: usize,
    pub refresh_batch: usize,
    /// Training frames used to refresh normalization statistics of each
    /// posterior sample; `None` uses the whole training split.
    pub swag_refresh_frames: Option<usize>,
}

impl Default for MarginalizationSpec {
    fn default() -> Self {
        Self {
            method: Method::Point,
            n_models: 5,
            dropout_samples: 100,
            swag_scale: 0.25,
            swag_samples: 20,
            refresh_batch: 64,
            swag_refresh_frames: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for TemperatureGrid {
    fn default() -> Self {
        Self {
            min: 0.05,
            max: 10.0,
            step: 0.05,
        }
    }
}

impl TemperatureGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step).round() as usize;
        (0..=n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub top_k: Vec<usize>,
    pub ece_bins: usize,
    pub temperature_grid: TemperatureGrid,
    pub temper_mode: TemperMode,
    pub thresholds: Vec<f64>,
    pub dnmed_edges: Vec<f64>,
    /// Frames per class in the held-out evaluation set.
    pub holdout_per_class: usize,
    pub batch_size: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            top_k: vec![1, 2, 3],
            ece_bins: 15,
            temperature_grid: TemperatureGrid::default(),
            temper_mode: TemperMode::Member,
            thresholds: vec![0.4, 0.6, 0.8],
            dnmed_edges: vec![50.0, 200.0, 400.0, 700.0, 1000.0],
            holdout_per_class: 100,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; dataset, training and sampling streams derive from it.
    pub seed: u64,
    /// Template for every simulated set; `examples_per_class`,
    /// `orientation_policy` and `seed` are set per run.
    pub dataset: DatasetSpec,
    pub sizes: Vec<usize>,
    pub policies: Vec<OrientationPolicy>,
    pub curate_threshold: f64,
    pub split: SplitAssignment,
    pub backbone: BackboneConfig,
    pub training: TrainingSpec,
    pub marginalization: MarginalizationSpec,
    pub eval: EvalSpec,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            seed: 0,
            dataset: DatasetSpec::default(),
            sizes: vec![50, 100, 200],
            policies: vec![OrientationPolicy::Nadir, OrientationPolicy::Random],
            curate_threshold: 0.0,
            split: SplitAssignment::default(),
            backbone: BackboneConfig::default(),
            training: TrainingSpec::default(),
            marginalization: MarginalizationSpec::default(),
            eval: EvalSpec::default(),
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.backbone.validate()?;
        self.training.validate()?;
        self.split.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a nonempty list of positive counts".into());
        }
        if self.policies.is_empty() {
            return bad("at least one orientation policy is required".into());
        }
        let n_labels = self.dataset.n_classes + usize::from(self.dataset.include_flat);
        if self.backbone.n_classes != n_labels {
            return bad(format!(
                "backbone has {} outputs but the dataset has {n_labels} labels",
                self.backbone.n_classes
            ));
        }
        if (self.backbone.input_height, self.backbone.input_width)
            != (self.dataset.instrument.frame_height, self.dataset.instrument.frame_width)
        {
            return bad("backbone input size differs from the instrument frame size".into());
        }
        let m = &self.marginalization;
        if m.n_models == 0 || m.dropout_samples == 0 || m.swag_samples == 0 {
            return bad("n_models, dropout_samples and swag_samples must be >= 1".into());
        }
        if !(m.swag_scale >= 0.0) {
            return bad("swag_scale must be >= 0".into());
        }
        if m.refresh_batch < 2 {
            return bad("refresh_batch must be >= 2".into());
        }
        let e = &self.eval;
        if e.top_k.iter().any(|&k| k == 0 || k > n_labels) {
            return bad(format!("top_k entries must lie in 1..={n_labels}"));
        }
        if e.ece_bins == 0 || e.holdout_per_class == 0 || e.batch_size == 0 {
            return bad("ece_bins, holdout_per_class and batch_size must be >= 1".into());
        }
        let g = &e.temperature_grid;
        if !(g.min > 0.0 && g.step > 0.0 && g.max >= g.min) {
            return bad("temperature grid needs 0 < min <= max and step > 0".into());
        }
        if e.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("thresholds must lie in [0, 1]".into());
        }
        if e.dnmed_edges.len() < 2 || e.dnmed_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("dnmed_edges must be strictly increasing".into());
        }
        if !(self.curate_threshold >= 0.0) {
            return bad("curate_threshold must be >= 0".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn largest_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn primary_policy(&self) -> OrientationPolicy {
        self.policies[0]
    }
}

/// Hex SHA-256 of a JSON value; object keys are sorted by `serde_json`.
pub fn hash_json(v: &serde_json::Value) -> String {
    let digest = Sha256::digest(v.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
