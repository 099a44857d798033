use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use spectranet_autodiff::{Checkpoint, Tensor};

use crate::error::{Error, Result};
use crate::model::{Layout, ParameterVector};

/// Running arithmetic mean of weight checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SwaState {
    pub mean: ParameterVector,
    pub n_collected: usize,
}

impl SwaState {
    pub fn new(layout: Arc<Layout>) -> Self {
        Self {
            mean: ParameterVector::zeros(layout),
            n_collected: 0,
        }
    }

    /// `mean <- (mean * n + checkpoint) / (n + 1)`.
    pub fn update(&mut self, checkpoint: &ParameterVector) -> Result<()> {
        self.mean.check_compatible(checkpoint)?;
        let n = self.n_collected as f64;
        for (m, &x) in self.mean.values.iter_mut().zip(&checkpoint.values) {
            *m = (*m * n + x) / (n + 1.0);
        }
        self.n_collected += 1;
        Ok(())
    }
}

/// Diagonal plus low-rank Gaussian over weights, accumulated from checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SwagState {
    pub mean: ParameterVector,
    /// Running mean of squared weights.
    pub second_moment: Vec<f64>,
    /// The most recent `rank` deviations `checkpoint - mean`, oldest first.
    pub deviations: VecDeque<Vec<f64>>,
    pub rank: usize,
    pub n_collected: usize,
}

impl SwagState {
    pub fn new(layout: Arc<Layout>, rank: usize) -> Self {
        let d = layout.total();
        Self {
            mean: ParameterVector::zeros(layout),
            second_moment: vec![0.0; d],
            deviations: VecDeque::with_capacity(rank),
            rank,
            n_collected: 0,
        }
    }

    pub fn update(&mut self, checkpoint: &ParameterVector) -> Result<()> {
        self.mean.check_compatible(checkpoint)?;
        let n = self.n_collected as f64;
        for ((m, s), &x) in self
            .mean
            .values
            .iter_mut()
            .zip(self.second_moment.iter_mut())
            .zip(&checkpoint.values)
        {
            *m = (*m * n + x) / (n + 1.0);
            *s = (*s * n + x * x) / (n + 1.0);
        }
        self.n_collected += 1;
        if self.rank > 0 {
            if self.deviations.len() == self.rank {
                self.deviations.pop_front();
            }
            let dev = checkpoint.values.iter().zip(&self.mean.values).map(|(x, m)| x - m).collect();
            self.deviations.push_back(dev);
        }
        Ok(())
    }

    /// `max(second_moment - mean^2, 0)` per weight.
    pub fn diagonal(&self) -> Vec<f64> {
        self.second_moment
            .iter()
            .zip(&self.mean.values)
            .map(|(s, m)| (s - m * m).max(0.0))
            .collect()
    }

    /// `mean + scale * (sqrt(diag) * z1 / sqrt(2) + D z2 / sqrt(2 (K - 1)))`
    /// with `K` the number of stored deviations; the low-rank term is
    /// dropped when `K < 2`.
    pub fn sample<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Result<ParameterVector> {
        if self.n_collected < 2 {
            return Err(Error::Config(format!(
                "SWAG sampling needs at least 2 checkpoints, have {}; lengthen the collection window",
                self.n_collected
            )));
        }
        if !(scale >= 0.0) {
            return Err(Error::Config(format!("SWAG scale must be >= 0, got {scale}")));
        }
        if scale == 0.0 {
            return Ok(self.mean.clone());
        }
        let diag = self.diagonal();
        let mut values: Vec<f64> = diag
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v.sqrt() * z / std::f64::consts::SQRT_2
            })
            .collect();
        let k = self.deviations.len();
        if k >= 2 {
            let c = 1.0 / (2.0 * (k as f64 - 1.0)).sqrt();
            for dev in &self.deviations {
                let z: f64 = StandardNormal.sample(rng);
                for (v, d) in values.iter_mut().zip(dev) {
                    *v += c * d * z;
                }
            }
        }
        for (v, m) in values.iter_mut().zip(&self.mean.values) {
            *v = m + scale * *v;
        }
        ParameterVector::new(self.mean.layout.clone(), values)
    }

    /// Checkpoint holding `mean/<name>`, `second_moment/<name>` and
    /// `deviation<k>/<name>` for every layout entry.
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let meta = json!({
            "kind": "swag",
            "rank": self.rank,
            "n_collected": self.n_collected,
            "deviations": self.deviations.len(),
            "layout": *self.mean.layout,
            "extra": meta,
        });
        let mut ck = Checkpoint::new(meta);
        let mut push = |prefix: &str, values: &[f64]| {
            for e in &self.mean.layout.entries {
                let t = Tensor::new(e.shape.clone(), values[e.offset..e.offset + e.len()].to_vec()).expect("layout");
                ck.push(format!("{prefix}/{}", e.name), &t);
            }
        };
        push("mean", &self.mean.values);
        push("second_moment", &self.second_moment);
        for (k, d) in self.deviations.iter().enumerate() {
            push(&format!("deviation{k:02}"), d);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("SWAG state file: {what}"));
        if ck.meta.get("kind").and_then(|v| v.as_str()) != Some("swag") {
            return Err(bad("not a SWAG state"));
        }
        let field = |k: &str| ck.meta.get(k).and_then(|v| v.as_u64()).ok_or_else(|| bad(k));
        let rank = field("rank")? as usize;
        let n_collected = field("n_collected")? as usize;
        let n_dev = field("deviations")? as usize;
        let layout: Layout = serde_json::from_value(ck.meta.get("layout").cloned().ok_or_else(|| bad("layout"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let gather = |prefix: &str| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(layout.total());
            for e in &layout.entries {
                out.extend(ck.require(&format!("{prefix}/{}", e.name))?.data().iter().map(|&v| v as f64));
            }
            Ok(out)
        };
        let mean = gather("mean")?;
        let second_moment = gather("second_moment")?;
        let deviations = (0..n_dev).map(|k| gather(&format!("deviation{k:02}"))).collect::<Result<_>>()?;
        Ok(Self {
            mean: ParameterVector::new(Arc::new(layout), mean)?,
            second_moment,
            deviations,
            rank,
            n_collected,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn layout(d: usize) -> Arc<Layout> {
        Arc::new(Layout::from_shapes([("w", &[d][..])]))
    }

    fn pv(l: &Arc<Layout>, v: Vec<f64>) -> ParameterVector {
        ParameterVector::new(l.clone(), v).unwrap()
    }

    #[test]
    fn swa_of_zero_and_two_is_one() {
        let l = layout(4);
        let mut s = SwaState::new(l.clone());
        s.update(&pv(&l, vec![0.0; 4])).unwrap();
        s.update(&pv(&l, vec![2.0; 4])).unwrap();
        assert_eq!(s.mean.values, vec![1.0; 4]);
        let mut one = SwaState::new(l.clone());
        let x = pv(&l, vec![0.3, -1.7, 5.5, 1e-9]);
        one.update(&x).unwrap();
        assert_eq!(one.mean, x);
        assert!(one.update(&pv(&layout(3), vec![0.0; 3])).is_err());
    }

    #[test]
    fn swag_identical_checkpoints_collapse_to_mean() {
        let l = layout(3);
        let mut s = SwagState::new(l.clone(), 5);
        for _ in 0..4 {
            s.update(&pv(&l, vec![0.5, -0.25, 2.0])).unwrap();
        }
        assert!(s.diagonal().iter().all(|&v| v == 0.0));
        assert!(s.deviations.iter().flatten().all(|&v| v == 0.0));
        let mut rng = rng_from_seed(1);
        for _ in 0..10 {
            assert_eq!(s.sample(0.5, &mut rng).unwrap().values, s.mean.values);
        }
    }

    #[test]
    fn swag_needs_two_checkpoints_and_keeps_rank_columns() {
        let l = layout(2);
        let mut s = SwagState::new(l.clone(), 3);
        s.update(&pv(&l, vec![1.0, 2.0])).unwrap();
        assert!(s.sample(0.1, &mut rng_from_seed(0)).is_err());
        for i in 0..6 {
            s.update(&pv(&l, vec![i as f64, 1.0])).unwrap();
        }
        assert_eq!(s.deviations.len(), 3);
        assert!(s.sample(-1.0, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn swag_file_round_trip() {
        let l = Arc::new(Layout::from_shapes([("a", &[2, 2][..]), ("b", &[3][..])]));
        let mut s = SwagState::new(l.clone(), 4);
        for i in 0..6 {
            let v = (0..7).map(|j| ((i * 7 + j) as f32 * 0.37).sin() as f64).collect();
            s.update(&pv(&l, v)).unwrap();
        }
        let back = SwagState::from_checkpoint(&s.to_checkpoint(serde_json::Value::Null)).unwrap();
        assert_eq!(back.rank, 4);
        assert_eq!(back.n_collected, 6);
        assert_eq!(back.deviations.len(), 4);
        for (a, b) in back.mean.values.iter().zip(&s.mean.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
