//! Staged pipeline: simulate, curate, train, evaluate. Each stage writes a
//! `stage.json` marker holding the hash of its inputs; a stage whose marker
//! matches and whose artifacts exist is skipped.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use spectranet_autodiff::Checkpoint;

use super::config::{hash_json, ExperimentConfig, Method};
use super::train::train_model;
use crate::bayes::{
    bn_refresh, ensemble_predict, mc_dropout_predict, point_predict, Member, PredictiveDistribution, Source,
    SwagState,
};
use crate::error::{Error, Result};
use crate::eval::report::{self, SummaryRow};
use crate::eval::{
    accuracy_by_dnmed, calibration_report, confusion_matrix, dnmed_trend, records_from, threshold_abstain,
    top_k_accuracy, AbstentionRow, CalibrationReport, EvalRecord,
};
use crate::manifest::{DatasetManifest, Split};
use crate::metrics::{curate, split};
use crate::model::{FrameSet, Model};
use crate::rng::{named_seed, rng_from_seed};
use crate::sim::{generate_dataset, ClassSpecFile, DatasetSpec, OrientationPolicy};

/// Bumped whenever training changes what it writes for the same inputs.
const TRAIN_VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub cached: bool,
    pub seconds: f64,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Serialize, Deserialize)]
struct StageMarker {
    key: String,
    artifacts: Vec<String>,
}

const MARKER: &str = "stage.json";

fn read_marker(dir: &Path, key: &str) -> Option<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(MARKER)).ok()?;
    let m: StageMarker = serde_json::from_str(&text).ok()?;
    (m.key == key && m.artifacts.iter().all(|a| dir.join(a).exists())).then_some(m.artifacts)
}

fn write_marker(dir: &Path, key: &str, artifacts: &[String]) -> Result<()> {
    let m = StageMarker {
        key: key.to_string(),
        artifacts: artifacts.to_vec(),
    };
    let p = dir.join(MARKER);
    std::fs::write(&p, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&p, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Run `body` in `dir` unless a matching marker is present. The directory is
/// cleared first so no stale output survives a rerun.
fn cached_stage(
    name: &str,
    dir: &Path,
    key: &str,
    body: impl FnOnce(&Path) -> Result<Vec<String>>,
) -> Result<StageRecord> {
    let t = Instant::now();
    if let Some(artifacts) = read_marker(dir, key) {
        log::info!("{name}: cached");
        return Ok(StageRecord {
            name: name.to_string(),
            key: key.to_string(),
            cached: true,
            seconds: t.elapsed().as_secs_f64(),
            artifacts,
        });
    }
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    create_dir(dir)?;
    let artifacts = body(dir)?;
    write_marker(dir, key, &artifacts)?;
    log::info!("{name}: done in {:.1}s", t.elapsed().as_secs_f64());
    Ok(StageRecord {
        name: name.to_string(),
        key: key.to_string(),
        cached: false,
        seconds: t.elapsed().as_secs_f64(),
        artifacts,
    })
}

/// One trained model family: `(policy, examples per class)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunKey {
    pub policy: OrientationPolicy,
    pub size: usize,
}

impl RunKey {
    fn tag(&self) -> String {
        format!("{}/n{}", self.policy, self.size)
    }
}

/// Evaluation-set predictions with their labels.
#[derive(Debug, Clone)]
pub struct Scored {
    pub source: String,
    pub preds: Vec<PredictiveDistribution>,
    pub labels: Vec<usize>,
    pub dnmed: Vec<f64>,
}

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub workers: usize,
    pub manifest: RunManifest,
    holdout: HashMap<OrientationPolicy, Arc<FrameSet>>,
    train_sets: HashMap<RunKey, Arc<FrameSet>>,
    predictions: HashMap<(RunKey, String), Arc<Scored>>,
}

impl Runner {
    /// Validate `cfg`, create `out` and record the configuration there.
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        create_dir(&out)?;
        cfg.save(out.join("config.json"))?;
        let hash = cfg.hash();
        let workers = cfg.workers.max(1);
        Ok(Self {
            manifest: RunManifest {
                run_id: format!("{}-{}", cfg.name, &hash[..12]),
                config_hash: hash,
                stages: Vec::new(),
            },
            cfg,
            out,
            workers,
            holdout: HashMap::new(),
            train_sets: HashMap::new(),
            predictions: HashMap::new(),
        })
    }

    fn record(&mut self, r: StageRecord) -> Result<()> {
        self.manifest.stages.push(r);
        let p = self.out.join("run_manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.manifest)?).map_err(|e| Error::io(&p, e))
    }

    pub fn label_names(&self) -> Vec<String> {
        let classes: Vec<String> = (0..self.cfg.dataset.n_classes).map(|c| format!("sat{c:02}")).collect();
        let mut names = classes;
        if self.cfg.dataset.include_flat {
            names.push(crate::manifest::FLAT_CLASS.into());
        }
        names
    }

    fn sim_dir(&self, policy: OrientationPolicy, part: &str) -> PathBuf {
        self.out.join("sim").join(policy.to_string()).join(part)
    }

    fn curated_dir(&self, k: RunKey) -> PathBuf {
        self.out.join("curated").join(k.policy.to_string()).join(format!("n{}", k.size))
    }

    fn member_dir(&self, k: RunKey, m: usize) -> PathBuf {
        self.out
            .join("models")
            .join(k.policy.to_string())
            .join(format!("n{}", k.size))
            .join(format!("m{m:02}"))
    }

    fn dataset_spec(&self, policy: OrientationPolicy, part: &str, per_class: usize) -> DatasetSpec {
        DatasetSpec {
            examples_per_class: per_class,
            orientation_policy: policy,
            seed: named_seed(self.cfg.seed, &format!("{part}/{policy}")),
            ..self.cfg.dataset.clone()
        }
    }

    fn sim_key(&self, policy: OrientationPolicy, part: &str) -> String {
        let n = if part == "pool" {
            self.cfg.largest_size()
        } else {
            self.cfg.eval.holdout_per_class
        };
        hash_json(&json!({"stage": "simulate", "spec": self.dataset_spec(policy, part, n)}))
    }

    fn curate_key(&self, k: RunKey) -> String {
        hash_json(&json!({
            "stage": "curate",
            "pool": self.sim_key(k.policy, "pool"),
            "size": k.size,
            "threshold": self.cfg.curate_threshold,
            "split": self.cfg.split,
        }))
    }

    fn member_key(&self, k: RunKey, m: usize) -> String {
        hash_json(&json!({
            "stage": "train",
            "version": TRAIN_VERSION,
            "data": self.curate_key(k),
            "backbone": self.cfg.backbone,
            "training": self.cfg.training,
            "refresh_batch": self.cfg.marginalization.refresh_batch,
            "seed": self.member_seed(k, m),
        }))
    }

    fn member_seed(&self, k: RunKey, m: usize) -> u64 {
        named_seed(self.cfg.seed, &format!("train/{}/m{m}", k.tag()))
    }

    /// Simulate the training pool (at the largest size) and the held-out
    /// evaluation set for every policy.
    pub fn simulate(&mut self) -> Result<()> {
        let lib = self.cfg.dataset.class_library()?;
        let classes_path = self.out.join("sim").join("classes.json");
        create_dir(classes_path.parent().expect("has parent"))?;
        ClassSpecFile {
            grid: self.cfg.dataset.instrument.grid,
            classes: lib.clone(),
        }
        .save(&classes_path)?;
        for policy in self.cfg.policies.clone() {
            for (part, n) in [
                ("pool", self.cfg.largest_size()),
                ("holdout", self.cfg.eval.holdout_per_class),
            ] {
                let spec = self.dataset_spec(policy, part, n);
                let key = self.sim_key(policy, part);
                let dir = self.sim_dir(policy, part);
                let rec = cached_stage(&format!("simulate {policy}/{part}"), &dir, &key, |d| {
                    generate_dataset(&spec, &lib, d)?;
                    Ok(vec!["manifest.jsonl".into()])
                })?;
                self.record(rec)?;
            }
        }
        Ok(())
    }

    fn require(&self, path: PathBuf, stage: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                artifact: path.display().to_string(),
                stage: stage.into(),
            })
        }
    }

    /// Subset the pool to each size, apply the DN_med cut and assign splits.
    pub fn curate(&mut self) -> Result<()> {
        for policy in self.cfg.policies.clone() {
            let pool_path = self.require(self.sim_dir(policy, "pool").join("manifest.jsonl"), "simulate")?;
            if read_marker(&self.sim_dir(policy, "pool"), &self.sim_key(policy, "pool")).is_none() {
                return Err(Error::MissingArtifact {
                    artifact: pool_path.display().to_string(),
                    stage: "simulate".into(),
                });
            }
            let pool = DatasetManifest::load(&pool_path)?;
            for size in self.cfg.sizes.clone() {
                let k = RunKey { policy, size };
                let key = self.curate_key(k);
                let dir = self.curated_dir(k);
                let (threshold, assignment) = (self.cfg.curate_threshold, self.cfg.split);
                let rec = cached_stage(&format!("curate {}", k.tag()), &dir, &key, |d| {
                    let mut taken: HashMap<&str, usize> = HashMap::new();
                    let records = pool
                        .records
                        .iter()
                        .filter(|r| {
                            let c = taken.entry(r.class_id.as_str()).or_default();
                            *c += 1;
                            *c <= size
                        })
                        .map(|r| {
                            let mut r = r.clone();
                            r.path = format!("../../../sim/{policy}/pool/{}", r.path);
                            r
                        })
                        .collect();
                    let subset = DatasetManifest::new(records, d);
                    let cur = curate(&subset, threshold)?;
                    let (mut m, warnings) = split(&cur.manifest, &assignment)?;
                    for w in &warnings {
                        log::warn!("{}: {w}", k.tag());
                    }
                    m.save(d.join("manifest.jsonl"))?;
                    let p = d.join("curation.json");
                    let report = json!({"threshold": threshold, "per_class": cur.per_class, "warnings": warnings});
                    std::fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
                    Ok(vec!["manifest.jsonl".into(), "curation.json".into()])
                })?;
                self.record(rec)?;
            }
        }
        Ok(())
    }

    fn train_set(&mut self, k: RunKey) -> Result<Arc<FrameSet>> {
        if let Some(s) = self.train_sets.get(&k) {
            return Ok(s.clone());
        }
        let dir = self.curated_dir(k);
        let path = self.require(dir.join("manifest.jsonl"), "curate")?;
        if read_marker(&dir, &self.curate_key(k)).is_none() {
            return Err(Error::MissingArtifact {
                artifact: path.display().to_string(),
                stage: "curate".into(),
            });
        }
        let m = DatasetManifest::load(path)?.with_split(Split::Train);
        let set = Arc::new(FrameSet::from_manifest(&m, &self.label_names())?);
        self.train_sets.insert(k, set.clone());
        Ok(set)
    }

    fn holdout_set(&mut self, policy: OrientationPolicy) -> Result<Arc<FrameSet>> {
        if let Some(s) = self.holdout.get(&policy) {
            return Ok(s.clone());
        }
        let dir = self.sim_dir(policy, "holdout");
        let path = self.require(dir.join("manifest.jsonl"), "simulate")?;
        let set = Arc::new(FrameSet::from_manifest(&DatasetManifest::load(path)?, &self.label_names())?);
        self.holdout.insert(policy, set.clone());
        Ok(set)
    }

    /// Train members `0..n_models` for each run. Members are independent and
    /// run on a pool of `workers` threads; results do not depend on the pool size.
    pub fn train(&mut self, runs: &[(RunKey, usize)]) -> Result<()> {
        let mut jobs = Vec::new();
        for &(k, n) in runs {
            let set = self.train_set(k)?;
            for m in 0..n {
                jobs.push((k, m, set.clone(), self.member_dir(k, m), self.member_key(k, m), self.member_seed(k, m)));
            }
        }
        let (backbone, training) = (self.cfg.backbone.clone(), self.cfg.training.clone());
        let refresh_batch = self.cfg.marginalization.refresh_batch;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let records: Vec<StageRecord> = pool.install(|| {
            jobs.par_iter()
                .map(|(k, m, set, dir, key, seed)| {
                    cached_stage(&format!("train {}/m{m:02}", k.tag()), dir, key, |d| {
                        let spec = super::train::TrainingSpec {
                            seed: *seed,
                            ..training.clone()
                        };
                        let out = train_model(&backbone, &spec, set)?;
                        out.model.to_checkpoint().save(d.join("final.spck"))?;
                        let mut swa = out.model.clone();
                        swa.unflatten(&out.swa.mean)?;
                        bn_refresh(&mut swa, set, refresh_batch)?;
                        swa.to_checkpoint().save(d.join("swa.spck"))?;
                        out.swag.to_checkpoint(json!({"seed": seed})).save(d.join("swag.spck"))?;
                        let p = d.join("history.json");
                        std::fs::write(&p, serde_json::to_string_pretty(&out.history)?).map_err(|e| Error::io(&p, e))?;
                        Ok(["final.spck", "swa.spck", "swag.spck", "history.json"].map(String::from).to_vec())
                    })
                })
                .collect::<Result<_>>()
        })?;
        for r in records {
            self.record(r)?;
        }
        Ok(())
    }

    fn load_member(&self, k: RunKey, m: usize, file: &str) -> Result<Checkpoint> {
        let dir = self.member_dir(k, m);
        let path = self.require(dir.join(file), "train")?;
        if read_marker(&dir, &self.member_key(k, m)).is_none() {
            return Err(Error::MissingArtifact {
                artifact: path.display().to_string(),
                stage: "train".into(),
            });
        }
        Ok(Checkpoint::load(path)?)
    }

    fn load_model(&self, k: RunKey, m: usize, file: &str) -> Result<Model> {
        Model::from_checkpoint(&self.load_member(k, m, file)?)
    }

    fn refresh_set(&mut self, k: RunKey) -> Result<FrameSet> {
        let set = self.train_set(k)?;
        Ok(match self.cfg.marginalization.swag_refresh_frames {
            Some(n) if n < set.len() => {
                let idx: Vec<usize> = (0..n).map(|i| i * set.len() / n).collect();
                set.subset(&idx)
            }
            _ => (*set).clone(),
        })
    }

    /// Held-out predictions of `method` for run `k`. Single-model methods
    /// use member 0. `member` selects one SWA member for per-member rows.
    pub fn predict(&mut self, k: RunKey, method: Method, member: Option<usize>) -> Result<Arc<Scored>> {
        let source = match member {
            Some(m) => format!("swa_m{m:02}"),
            None => method.to_string(),
        };
        if let Some(s) = self.predictions.get(&(k, source.clone())) {
            return Ok(s.clone());
        }
        let eval = self.holdout_set(k.policy)?;
        let mg = self.cfg.marginalization.clone();
        let bs = self.cfg.eval.batch_size;
        let seed = named_seed(self.cfg.seed, &format!("predict/{}/{source}", k.tag()));
        let relabel = |v: Vec<PredictiveDistribution>, s: Source| {
            v.into_iter()
                .map(|mut p| {
                    p.source = s;
                    p
                })
                .collect::<Vec<_>>()
        };
        let preds = match (method, member) {
            (_, Some(m)) => relabel(point_predict(&self.load_model(k, m, "swa.spck")?, &eval, bs)?, Source::Swa),
            (Method::Point, None) => point_predict(&self.load_model(k, 0, "final.spck")?, &eval, bs)?,
            (Method::Dropout, None) => {
                let model = self.load_model(k, 0, "final.spck")?;
                mc_dropout_predict(&model, &eval, mg.dropout_samples, bs, &mut rng_from_seed(seed))?
            }
            (Method::Swa, None) => {
                let model = self.load_model(k, 0, "swa.spck")?;
                ensemble_predict(&[Member::Swa(&model)], &eval, Source::Swa, bs, seed)?
            }
            (Method::MultiSwa, None) => {
                let models = (0..mg.n_models)
                    .map(|m| self.load_model(k, m, "swa.spck"))
                    .collect::<Result<Vec<_>>>()?;
                let members: Vec<Member> = models.iter().map(Member::Swa).collect();
                ensemble_predict(&members, &eval, Source::MultiSwa, bs, seed)?
            }
            (Method::Swag | Method::MultiSwag, None) => {
                let n = if method == Method::Swag { 1 } else { mg.n_models };
                let refresh = self.refresh_set(k)?;
                let loaded = (0..n)
                    .map(|m| {
                        let base = self.load_model(k, m, "final.spck")?;
                        let state = SwagState::from_checkpoint(&self.load_member(k, m, "swag.spck")?)?;
                        Ok((base, state))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let members: Vec<Member> = loaded
                    .iter()
                    .map(|(base, state)| Member::Swag {
                        base,
                        state,
                        scale: mg.swag_scale,
                        n_samples: mg.swag_samples,
                        refresh: &refresh,
                    })
                    .collect();
                let src = if method == Method::Swag {
                    Source::Swag
                } else {
                    Source::MultiSwag
                };
                ensemble_predict(&members, &eval, src, mg.refresh_batch, seed)?
            }
        };
        let scored = Arc::new(Scored {
            source,
            preds,
            labels: eval.labels.clone(),
            dnmed: eval.dnmed.clone(),
        });
        self.predictions.insert((k, scored.source.clone()), scored.clone());
        Ok(scored)
    }

    pub fn records(&self, s: &Scored, t: f64) -> Result<Vec<EvalRecord>> {
        records_from(&s.preds, &s.labels, &s.dnmed, Split::Test, t, self.cfg.eval.temper_mode)
    }

    pub fn calibration(&self, s: &Scored) -> Result<CalibrationReport> {
        let e = &self.cfg.eval;
        calibration_report(&s.preds, &s.labels, &e.temperature_grid.points(), e.ece_bins, e.temper_mode)
    }

    pub fn summary(&self, k: RunKey, s: &Scored) -> Result<SummaryRow> {
        let recs = self.records(s, 1.0)?;
        let cal = self.calibration(s)?;
        Ok(SummaryRow {
            policy: k.policy.to_string(),
            examples_per_class: k.size,
            source: s.source.clone(),
            n_records: recs.len(),
            top_k: self
                .cfg
                .eval
                .top_k
                .iter()
                .map(|&kk| Ok((kk, top_k_accuracy(&recs, kk)?)))
                .collect::<Result<_>>()?,
            ece: cal.ece,
            best_t: cal.best_t.unwrap_or(1.0),
            ece_at_best_t: cal.ece_at_best_t.unwrap_or(cal.ece),
        })
    }

    pub fn abstention(&self, s: &Scored) -> Result<Vec<AbstentionRow>> {
        let recs = self.records(s, 1.0)?;
        std::iter::once(0.0)
            .chain(self.cfg.eval.thresholds.iter().copied())
            .map(|t| threshold_abstain(&recs, t))
            .collect()
    }

    fn write_provenance(&self, dir: &Path, files: &[&str], runs: &[RunKey]) -> Result<()> {
        let datasets: Vec<String> = runs
            .iter()
            .map(|k| format!("curated/{}/manifest.jsonl", k.tag()))
            .chain(self.cfg.policies.iter().map(|p| format!("sim/{p}/holdout/manifest.jsonl")))
            .collect();
        let prov = json!({
            "config_hash": self.manifest.config_hash,
            "files": files,
            "training_manifests": datasets,
        });
        let p = dir.join("provenance.json");
        std::fs::write(&p, serde_json::to_string_pretty(&prov)? + "\n").map_err(|e| Error::io(&p, e))
    }

    /// Top-k and calibration of `method` for every policy and size.
    pub fn report_accuracy_vs_size(&mut self, dir: &Path, method: Method) -> Result<Vec<SummaryRow>> {
        let mut rows = Vec::new();
        let mut runs = Vec::new();
        for policy in self.cfg.policies.clone() {
            let mut sizes = self.cfg.sizes.clone();
            sizes.sort_unstable();
            for size in sizes {
                let k = RunKey { policy, size };
                let s = self.predict(k, method, None)?;
                rows.push(self.summary(k, &s)?);
                runs.push(k);
            }
        }
        create_dir(dir)?;
        report::write_summary(dir.join("accuracy_vs_size.csv"), &rows)?;
        self.write_provenance(dir, &["accuracy_vs_size.csv"], &runs)?;
        Ok(rows)
    }

    /// Abstention rows, unfiltered first, for `method` at run `k`.
    pub fn report_abstention(&mut self, dir: &Path, k: RunKey, method: Method) -> Result<Vec<AbstentionRow>> {
        let s = self.predict(k, method, None)?;
        let rows = self.abstention(&s)?;
        create_dir(dir)?;
        report::write_abstention(dir.join("abstention.csv"), &s.source, &rows)?;
        self.write_provenance(dir, &["abstention.csv"], &[k])?;
        Ok(rows)
    }

    /// Every marginalization method plus each SWA member on its own.
    pub fn report_ensembles(&mut self, dir: &Path, k: RunKey) -> Result<Vec<SummaryRow>> {
        let mut rows = Vec::new();
        let mut cal = Vec::new();
        for method in Method::ALL {
            let s = self.predict(k, method, None)?;
            rows.push(self.summary(k, &s)?);
            cal.push((s.source.clone(), self.calibration(&s)?));
        }
        for m in 0..self.cfg.marginalization.n_models {
            let s = self.predict(k, Method::Swa, Some(m))?;
            rows.push(self.summary(k, &s)?);
        }
        create_dir(dir)?;
        report::write_summary(dir.join("ensemble_comparison.csv"), &rows)?;
        report::write_reliability(dir.join("reliability.csv"), &cal)?;
        for (name, rep) in &cal {
            report::reliability_svg(dir.join(format!("reliability_{name}.svg")), rep, name)?;
        }
        self.write_provenance(dir, &["ensemble_comparison.csv", "reliability.csv"], &[k])?;
        Ok(rows)
    }

    pub fn report_confusion(&mut self, dir: &Path, k: RunKey, method: Method) -> Result<()> {
        let s = self.predict(k, method, None)?;
        let recs = self.records(&s, 1.0)?;
        let m = confusion_matrix(&recs)?;
        let names = self.label_names();
        create_dir(dir)?;
        report::write_confusion(dir.join("confusion.csv"), &m, &names)?;
        report::write_class_stats(dir.join("per_class_stats.csv"), &m.per_class(&names))?;
        report::confusion_svg(dir.join("confusion.svg"), &m, &names)?;
        self.write_provenance(dir, &["confusion.csv", "per_class_stats.csv"], &[k])
    }

    pub fn report_dnmed(&mut self, dir: &Path, k: RunKey, method: Method) -> Result<Option<f64>> {
        let s = self.predict(k, method, None)?;
        let bins = accuracy_by_dnmed(&self.records(&s, 1.0)?, &self.cfg.eval.dnmed_edges)?;
        let rho = dnmed_trend(&bins);
        create_dir(dir)?;
        report::write_dnmed_bins(dir.join("accuracy_vs_dnmed.csv"), &bins, rho)?;
        self.write_provenance(dir, &["accuracy_vs_dnmed.csv"], &[k])?;
        Ok(rho)
    }

    pub fn reports_dir(&self, name: &str) -> PathBuf {
        self.out.join("reports").join(name)
    }

    /// Runs the configured method needs: member 0 everywhere, the full
    /// ensemble at the largest size of the primary policy.
    pub fn default_runs(&self) -> Vec<(RunKey, usize)> {
        let n = if self.cfg.marginalization.method.is_multi() {
            self.cfg.marginalization.n_models
        } else {
            1
        };
        self.all_runs(n)
    }

    pub fn all_runs(&self, n_models: usize) -> Vec<(RunKey, usize)> {
        self.cfg
            .policies
            .iter()
            .flat_map(|&policy| self.cfg.sizes.iter().map(move |&size| (RunKey { policy, size }, n_models)))
            .collect()
    }

    pub fn primary_run(&self) -> RunKey {
        RunKey {
            policy: self.cfg.primary_policy(),
            size: self.cfg.largest_size(),
        }
    }

    /// All reports for the configured method into `reports/eval`.
    pub fn evaluate(&mut self) -> Result<()> {
        let method = self.cfg.marginalization.method;
        let dir = self.reports_dir("eval");
        let k = self.primary_run();
        self.report_accuracy_vs_size(&dir, method)?;
        let s = self.predict(k, method, None)?;
        let cal = self.calibration(&s)?;
        report::write_reliability(dir.join("reliability.csv"), &[(s.source.clone(), cal.clone())])?;
        report::reliability_svg(dir.join("reliability.svg"), &cal, &s.source)?;
        self.report_confusion(&dir, k, method)?;
        self.report_dnmed(&dir, k, method)?;
        self.report_abstention(&dir, k, method)?;
        self.write_provenance(
            &dir,
            &[
                "accuracy_vs_size.csv",
                "reliability.csv",
                "confusion.csv",
                "per_class_stats.csv",
                "accuracy_vs_dnmed.csv",
                "abstention.csv",
            ],
            &self.all_runs(1).into_iter().map(|(k, _)| k).collect::<Vec<_>>(),
        )
    }
}
