use rand::Rng;
use serde::{Deserialize, Serialize};
use spectranet_autodiff::{softmax_rows, Tape};

use super::swa::SwagState;
use crate::error::{Error, Result};
use crate::model::{predict_logits, BnStatus, FrameSet, Mode, Model};
use crate::rng::{child_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Point,
    Dropout,
    Swa,
    Swag,
    MultiSwa,
    MultiSwag,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

/// Member logits and softmax vectors for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub source: Source,
    pub member_logits: Vec<Vec<f64>>,
    pub member_probs: Vec<Vec<f64>>,
}

/// Sum that does not depend on the order of `values`.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

impl PredictiveDistribution {
    pub fn from_logits(source: Source, member_logits: Vec<Vec<f64>>) -> Self {
        let member_probs = member_logits.iter().map(|l| softmax(l, 1.0)).collect();
        Self {
            source,
            member_logits,
            member_probs,
        }
    }

    pub fn n_members(&self) -> usize {
        self.member_probs.len()
    }

    pub fn n_classes(&self) -> usize {
        self.member_probs.first().map_or(0, Vec::len)
    }

    fn fold(&self, rows: &[Vec<f64>], f: impl Fn(&mut Vec<f64>) -> f64) -> Vec<f64> {
        (0..self.n_classes())
            .map(|c| {
                let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
                f(&mut col)
            })
            .collect()
    }

    /// Arithmetic mean of member probabilities; invariant to member order.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.n_members() as f64;
        self.fold(&self.member_probs, |col| ordered_sum(col) / n)
    }

    /// Mean of member softmax vectors after dividing each member's logits by `t`.
    pub fn tempered_mean(&self, t: f64) -> Vec<f64> {
        let tempered: Vec<Vec<f64>> = self.member_logits.iter().map(|l| softmax(l, t)).collect();
        let n = self.n_members() as f64;
        self.fold(&tempered, |col| ordered_sum(col) / n)
    }

    /// Per-class quantile of member probabilities, linear interpolation.
    pub fn quantile(&self, q: f64) -> Vec<f64> {
        self.fold(&self.member_probs, |col| {
            col.sort_by(f64::total_cmp);
            let pos = q.clamp(0.0, 1.0) * (col.len() - 1) as f64;
            let (i, frac) = (pos.floor() as usize, pos.fract());
            if i + 1 < col.len() {
                col[i] * (1.0 - frac) + col[i + 1] * frac
            } else {
                col[i]
            }
        })
    }

    pub fn median(&self) -> Vec<f64> {
        self.quantile(0.5)
    }

    fn concat(source: Source, parts: Vec<PredictiveDistribution>) -> Self {
        let mut member_logits = Vec::new();
        let mut member_probs = Vec::new();
        for p in parts {
            member_logits.extend(p.member_logits);
            member_probs.extend(p.member_probs);
        }
        Self {
            source,
            member_logits,
            member_probs,
        }
    }
}

fn rows(logits: &[f32], classes: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    logits.chunks(classes).map(|r| r.iter().map(|&v| v as f64).collect())
}

fn passes<R: Rng + ?Sized>(
    model: &Model,
    set: &FrameSet,
    mode: Mode,
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let c = model.config().n_classes;
    let mut per_frame = vec![Vec::with_capacity(n); set.len()];
    for _ in 0..n {
        let logits = predict_logits(model, set, mode, batch_size, rng)?;
        for (slot, row) in per_frame.iter_mut().zip(rows(&logits, c)) {
            slot.push(row);
        }
    }
    Ok(per_frame)
}

/// One deterministic pass per frame.
pub fn point_predict(model: &Model, set: &FrameSet, batch_size: usize) -> Result<Vec<PredictiveDistribution>> {
    let mut rng = rng_from_seed(0);
    Ok(passes(model, set, Mode::Eval, 1, batch_size, &mut rng)?
        .into_iter()
        .map(|l| PredictiveDistribution::from_logits(Source::Point, l))
        .collect())
}

/// `n_samples` stochastic passes with dropout on and frozen normalization statistics.
pub fn mc_dropout_predict<R: Rng + ?Sized>(
    model: &Model,
    set: &FrameSet,
    n_samples: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<PredictiveDistribution>> {
    if n_samples == 0 {
        return Err(Error::Config("need at least one dropout sample".into()));
    }
    Ok(passes(model, set, Mode::McInfer, n_samples, batch_size, rng)?
        .into_iter()
        .map(|l| PredictiveDistribution::from_logits(Source::Dropout, l))
        .collect())
}

/// Re-estimate the normalization statistics of `model` for its current
/// weights: one sweep over `set` in batch-statistics mode, dropout off, no
/// weight updates, statistics averaged over batches.
pub fn bn_refresh(model: &mut Model, set: &FrameSet, batch_size: usize) -> Result<()> {
    if set.len() < 2 {
        return Err(Error::Data("normalization refresh needs at least 2 frames".into()));
    }
    let bs = batch_size.max(2);
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut chunks: Vec<&[usize]> = idx.chunks(bs).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
        // fold a trailing single frame into the previous batch
        let n = chunks.len();
        chunks.truncate(n - 2);
        chunks.push(&idx[(n - 2) * bs..]);
    }
    let mut rng = rng_from_seed(0);
    let mut means: Vec<Vec<f64>> = Vec::new();
    let mut vars: Vec<Vec<f64>> = Vec::new();
    for (b, chunk) in chunks.iter().enumerate() {
        let mut tape = Tape::<f32>::new();
        let fwd = model.forward_on(&mut tape, &set.batch(chunk), Mode::Refresh, false, &mut rng)?;
        if b == 0 {
            means = fwd.batch_stats.iter().map(|s| vec![0.0; s.mean.len()]).collect();
            vars = means.clone();
        }
        let k = b as f64;
        for (l, s) in fwd.batch_stats.iter().enumerate() {
            let unbias = s.count as f64 / (s.count as f64 - 1.0).max(1.0);
            for ch in 0..s.mean.len() {
                means[l][ch] = (means[l][ch] * k + s.mean[ch]) / (k + 1.0);
                vars[l][ch] = (vars[l][ch] * k + s.var[ch] * unbias) / (k + 1.0);
            }
        }
    }
    model.set_running_stats(means, vars)
}

/// One component of an ensemble.
pub enum Member<'a> {
    Point(&'a Model),
    Dropout { model: &'a Model, n_samples: usize },
    /// A model loaded with SWA weights; its normalization statistics must be refreshed.
    Swa(&'a Model),
    /// Posterior samples from a SWAG state; each sample is refreshed on `refresh` before use.
    Swag {
        base: &'a Model,
        state: &'a SwagState,
        scale: f64,
        n_samples: usize,
        refresh: &'a FrameSet,
    },
}

/// Predictions of every member for every frame, pooled per frame. The
/// predictive probability is the mean of the pooled member softmax vectors.
pub fn ensemble_predict(
    members: &[Member<'_>],
    set: &FrameSet,
    source: Source,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<PredictiveDistribution>> {
    if members.is_empty() {
        return Err(Error::Config("an ensemble needs at least one member".into()));
    }
    for (i, m) in members.iter().enumerate() {
        if let Member::Swa(model) = m {
            if model.bn_status() == BnStatus::Stale {
                return Err(Error::Config(format!(
                    "ensemble member {i} has averaged weights but stale normalization statistics; refresh them first"
                )));
            }
        }
    }
    let mut pooled: Vec<Vec<PredictiveDistribution>> = vec![Vec::new(); set.len()];
    for (i, m) in members.iter().enumerate() {
        let mut rng = rng_from_seed(child_seed(seed, i as u64));
        let preds = match m {
            Member::Point(model) | Member::Swa(model) => point_predict(model, set, batch_size)?,
            Member::Dropout { model, n_samples } => mc_dropout_predict(model, set, *n_samples, batch_size, &mut rng)?,
            Member::Swag {
                base,
                state,
                scale,
                n_samples,
                refresh,
            } => {
                let mut parts: Vec<Vec<PredictiveDistribution>> = vec![Vec::new(); set.len()];
                for _ in 0..*n_samples {
                    let mut sample = (*base).clone();
                    sample.unflatten(&state.sample(*scale, &mut rng)?)?;
                    bn_refresh(&mut sample, refresh, batch_size)?;
                    for (slot, p) in parts.iter_mut().zip(point_predict(&sample, set, batch_size)?) {
                        slot.push(p);
                    }
                }
                parts
                    .into_iter()
                    .map(|p| PredictiveDistribution::concat(Source::Swag, p))
                    .collect()
            }
        };
        for (slot, p) in pooled.iter_mut().zip(preds) {
            slot.push(p);
        }
    }
    Ok(pooled
        .into_iter()
        .map(|parts| PredictiveDistribution::concat(source, parts))
        .collect())
}

/// Convenience: softmax rows of a logit matrix.
pub fn probabilities(logits: &[f32], classes: usize) -> Vec<Vec<f64>> {
    softmax_rows(logits, classes).chunks(classes).map(<[f64]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_disagreeing_members_average_to_a_half() {
        let d = PredictiveDistribution {
            source: Source::MultiSwa,
            member_logits: vec![vec![0.0, 0.0]; 2],
            member_probs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert_eq!(d.mean(), vec![0.5, 0.5]);
    }

    #[test]
    fn mean_is_exactly_permutation_invariant() {
        let logits: Vec<Vec<f64>> = (0..7).map(|i| (0..4).map(|j| ((i * 4 + j) as f64).sin() * 3.0).collect()).collect();
        let a = PredictiveDistribution::from_logits(Source::MultiSwa, logits.clone());
        let mut rev = logits;
        rev.reverse();
        rev.swap(1, 4);
        let b = PredictiveDistribution::from_logits(Source::MultiSwa, rev);
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.tempered_mean(2.5), b.tempered_mean(2.5));
    }

    #[test]
    fn ensemble_is_never_sharper_than_its_sharpest_member() {
        let cases = [
            vec![vec![4.0, 0.0, 0.0], vec![0.0, 4.0, 0.0]],
            vec![vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 5.0]],
            vec![vec![9.0, -3.0], vec![-1.0, 0.5]],
        ];
        for logits in cases {
            let d = PredictiveDistribution::from_logits(Source::MultiSwa, logits);
            let min_member = d.member_probs.iter().map(|p| entropy(p)).fold(f64::INFINITY, f64::min);
            assert!(entropy(&d.mean()) >= min_member);
        }
    }

    #[test]
    fn quantiles_of_members() {
        let d = PredictiveDistribution {
            source: Source::Dropout,
            member_logits: vec![vec![0.0, 0.0]; 3],
            member_probs: vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.4, 0.6]],
        };
        assert_eq!(d.median(), vec![0.4, 0.6]);
        let q1 = d.quantile(0.25);
        assert!((q1[0] - 0.3).abs() < 1e-12);
    }
}
