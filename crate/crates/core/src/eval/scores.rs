use serde::{Deserialize, Serialize};

use crate::bayes::{softmax, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::manifest::Split;

/// One scored prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub true_class: usize,
    /// Predictive probabilities after ensemble averaging.
    pub probs: Vec<f64>,
    /// Per-class median over members; equals `probs` for single-member predictions.
    pub median_probs: Vec<f64>,
    pub dnmed: f64,
    pub split: Split,
}

/// Where the temperature is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperMode {
    /// Each member's logits are divided by `T` before softmax and averaging.
    #[default]
    Member,
    /// The log of the ensemble mean probability is divided by `T`.
    Ensemble,
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be > 0, got {t}")))
    }
}

/// `softmax(logits / t)`.
pub fn temper(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    Ok(softmax(logits, t))
}

/// Probability vector of a predictive distribution at temperature `t`.
pub fn tempered_probs(pred: &PredictiveDistribution, t: f64, mode: TemperMode) -> Result<Vec<f64>> {
    check_temperature(t)?;
    Ok(match mode {
        TemperMode::Member => pred.tempered_mean(t),
        TemperMode::Ensemble => {
            let logp: Vec<f64> = pred.mean().iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
            softmax(&logp, t)
        }
    })
}

/// Score predictive distributions against labels at temperature `t`.
pub fn records_from(
    preds: &[PredictiveDistribution],
    labels: &[usize],
    dnmed: &[f64],
    split: Split,
    t: f64,
    mode: TemperMode,
) -> Result<Vec<EvalRecord>> {
    if preds.len() != labels.len() || preds.len() != dnmed.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels and {} DN_med values",
            preds.len(),
            labels.len(),
            dnmed.len()
        )));
    }
    preds
        .iter()
        .zip(labels)
        .zip(dnmed)
        .map(|((p, &y), &d)| {
            Ok(EvalRecord {
                true_class: y,
                probs: tempered_probs(p, t, mode)?,
                median_probs: p.median(),
                dnmed: d,
                split,
            })
        })
        .collect()
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

/// Position of class `c` when classes are ordered by descending probability,
/// ties broken by lowest index.
pub fn rank_of(p: &[f64], c: usize) -> usize {
    p.iter()
        .enumerate()
        .filter(|&(i, &v)| v > p[c] || (v == p[c] && i < c))
        .count()
}

/// Fraction of records whose true class is among the `k` most probable.
pub fn top_k_accuracy(records: &[EvalRecord], k: usize) -> Result<f64> {
    let n_classes = records.first().map_or(0, |r| r.probs.len());
    if k == 0 || k > n_classes {
        return Err(Error::Config(format!("k must lie in 1..={n_classes}, got {k}")));
    }
    let hits = records.iter().filter(|r| rank_of(&r.probs, r.true_class) < k).count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence of the bin, 0 when empty.
    pub confidence: f64,
    pub accuracy: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub n_bins: usize,
    pub best_t: Option<f64>,
    pub ece_at_best_t: Option<f64>,
    pub reliability: Vec<ReliabilityBin>,
}

/// Equal-width confidence bins over the predicted-class probability.
pub fn ece(records: &[EvalRecord], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    if records.is_empty() {
        return Err(Error::Data("ECE of an empty record set".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for r in records {
        let pred = argmax(&r.probs);
        let c = r.probs[pred];
        let b = ((c * n_bins as f64) as usize).min(n_bins - 1);
        count[b] += 1;
        conf[b] += c;
        correct[b] += usize::from(pred == r.true_class);
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    let reliability = (0..n_bins)
        .map(|b| {
            let (confidence, accuracy) = if count[b] > 0 {
                (conf[b] / count[b] as f64, correct[b] as f64 / count[b] as f64)
            } else {
                (0.0, 0.0)
            };
            let mass = count[b] as f64 / n;
            total += mass * (confidence - accuracy).abs();
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                confidence,
                accuracy,
                mass,
            }
        })
        .collect();
    Ok(CalibrationReport {
        ece: total,
        n_bins,
        best_t: None,
        ece_at_best_t: None,
        reliability,
    })
}

/// `0.05, 0.10, ..., 10.0`.
pub fn default_temperature_grid() -> Vec<f64> {
    (1..=200).map(|i| i as f64 / 20.0).collect()
}

/// Temperature with the lowest ECE; ties go to the smallest temperature.
pub fn temperature_sweep(
    preds: &[PredictiveDistribution],
    labels: &[usize],
    grid: &[f64],
    n_bins: usize,
    mode: TemperMode,
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Config("empty temperature grid".into()));
    }
    let dn = vec![0.0; preds.len()];
    let mut best = (f64::NAN, f64::INFINITY);
    for &t in grid {
        let e = ece(&records_from(preds, labels, &dn, Split::Unassigned, t, mode)?, n_bins)?.ece;
        if e < best.1 {
            best = (t, e);
        }
    }
    Ok(best)
}

/// ECE at `T = 1` with the sweep result attached.
pub fn calibration_report(
    preds: &[PredictiveDistribution],
    labels: &[usize],
    grid: &[f64],
    n_bins: usize,
    mode: TemperMode,
) -> Result<CalibrationReport> {
    let dn = vec![0.0; preds.len()];
    let mut rep = ece(&records_from(preds, labels, &dn, Split::Unassigned, 1.0, mode)?, n_bins)?;
    let (t, e) = temperature_sweep(preds, labels, grid, n_bins, mode)?;
    rep.best_t = Some(t);
    rep.ece_at_best_t = Some(e);
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionRow {
    pub threshold: f64,
    pub uncertain_fraction: f64,
    pub n_confident: usize,
    /// `None` when every record abstained.
    pub top1: Option<f64>,
    pub top3: Option<f64>,
}

/// Records whose largest median member probability is below `threshold`
/// are flagged uncertain; accuracies are computed on the rest.
pub fn threshold_abstain(records: &[EvalRecord], threshold: f64) -> Result<AbstentionRow> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    if records.is_empty() {
        return Err(Error::Data("abstention over an empty record set".into()));
    }
    let confident: Vec<EvalRecord> = records
        .iter()
        .filter(|r| r.median_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= threshold)
        .cloned()
        .collect();
    let n_classes = records[0].probs.len();
    let acc = |k: usize| -> Result<Option<f64>> {
        if confident.is_empty() {
            Ok(None)
        } else {
            top_k_accuracy(&confident, k.min(n_classes)).map(Some)
        }
    };
    Ok(AbstentionRow {
        threshold,
        uncertain_fraction: 1.0 - confident.len() as f64 / records.len() as f64,
        n_confident: confident.len(),
        top1: acc(1)?,
        top3: acc(3)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnMedBin {
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub count: usize,
    /// `None` flags an empty bin.
    pub accuracy: Option<f64>,
}

/// Top-1 accuracy in half-open bins `[e_i, e_{i+1})`; the last bin is closed.
pub fn accuracy_by_dnmed(records: &[EvalRecord], edges: &[f64]) -> Result<Vec<DnMedBin>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("DN_med bin edges must be strictly increasing, at least two".into()));
    }
    let last = edges.len() - 2;
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(b, w)| {
            let inside: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| r.dnmed >= w[0] && (r.dnmed < w[1] || (b == last && r.dnmed == w[1])))
                .collect();
            let hits = inside.iter().filter(|r| argmax(&r.probs) == r.true_class).count();
            DnMedBin {
                lower: w[0],
                upper: w[1],
                center: 0.5 * (w[0] + w[1]),
                count: inside.len(),
                accuracy: (!inside.is_empty()).then(|| hits as f64 / inside.len() as f64),
            }
        })
        .collect())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

/// Spearman correlation between bin center and accuracy over non-empty bins.
pub fn dnmed_trend(bins: &[DnMedBin]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = bins.iter().filter_map(|b| b.accuracy.map(|a| (b.center, a))).unzip();
    spearman(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Sum of the diagonal over the total, which is also the overall accuracy.
    pub fn micro_recall(&self) -> f64 {
        let diag: usize = (0..self.n_classes).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total() as f64
    }

    /// Precision, recall and F1 per class; a ratio with a zero denominator is 0.
    pub fn per_class(&self, names: &[String]) -> Vec<ClassStats> {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        (0..self.n_classes)
            .map(|c| {
                let tp = self.counts[c][c];
                let support: usize = self.counts[c].iter().sum();
                let predicted: usize = self.counts.iter().map(|row| row[c]).sum();
                let (precision, recall) = (ratio(tp, predicted), ratio(tp, support));
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassStats {
                    class: names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect()
    }
}

pub fn confusion_matrix(records: &[EvalRecord]) -> Result<ConfusionMatrix> {
    let n = records
        .first()
        .map(|r| r.probs.len())
        .ok_or_else(|| Error::Data("confusion matrix of an empty record set".into()))?;
    let mut counts = vec![vec![0; n]; n];
    for r in records {
        if r.true_class >= n {
            return Err(Error::Data(format!("label {} outside {n} classes", r.true_class)));
        }
        counts[r.true_class][argmax(&r.probs)] += 1;
    }
    Ok(ConfusionMatrix { n_classes: n, counts })
}
