//! Minibatch SGD with a cosine-then-constant schedule and SWA/SWAG collection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use spectranet_autodiff::{Sgd, SgdConfig, Tape};

use crate::bayes::{bn_refresh, SwaState, SwagState};
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, FrameSet, Mode, Model};
use crate::rng::{named_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Constant rate held through the collection window.
    pub swa_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of the final epochs in which one checkpoint per epoch is collected.
    pub swa_fraction: f64,
    pub swag_rank: usize,
    pub seed: u64,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            lr: 0.05,
            swa_lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            swa_fraction: 0.2,
            swag_rank: 20,
            seed: 0,
        }
    }
}

impl TrainingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("training needs epochs >= 1 and batch_size >= 2".into()));
        }
        if !(self.lr > 0.0 && self.swa_lr > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.swa_fraction) {
            return Err(Error::Config("swa_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight_decay be >= 0".into()));
        }
        Ok(())
    }

    /// Number of final epochs in the collection window, at least one.
    pub fn swa_epochs(&self) -> usize {
        ((self.epochs as f64 * self.swa_fraction).round() as usize).clamp(1, self.epochs)
    }

    pub fn swa_start(&self) -> usize {
        self.epochs - self.swa_epochs()
    }

    /// Cosine decay from `lr` to `swa_lr` over the epochs before the window, then constant.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let start = self.swa_start();
        if epoch >= start || start == 0 {
            return self.swa_lr;
        }
        let frac = epoch as f64 / start as f64;
        self.swa_lr + (self.lr - self.swa_lr) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

pub struct TrainOutput {
    /// Weights after the final epoch.
    pub model: Model,
    pub swa: SwaState,
    pub swag: SwagState,
    pub history: Vec<EpochStats>,
}

/// Train a freshly initialized model on `train`. Batches are reshuffled each
/// epoch from a seed derived from `spec.seed`; a trailing batch of one frame
/// is dropped because batch statistics are undefined for it. The returned
/// model has its normalization statistics recomputed on `train`.
pub fn train_model(backbone: &BackboneConfig, spec: &TrainingSpec, train: &FrameSet) -> Result<TrainOutput> {
    spec.validate()?;
    if train.len() < 2 {
        return Err(Error::Data("training needs at least 2 frames".into()));
    }
    let mut model = Model::build(backbone, named_seed(spec.seed, "init"))?;
    let mut opt = Sgd::<f32>::new(
        SgdConfig {
            lr: spec.lr,
            momentum: spec.momentum,
            weight_decay: spec.weight_decay,
        },
        model.params().iter().map(|p| p.len()),
    );
    let names: Vec<String> = model.layout().entries.iter().map(|e| e.name.clone()).collect();
    let mut swa = SwaState::new(model.layout().clone());
    let mut swag = SwagState::new(model.layout().clone(), spec.swag_rank);
    let mut history = Vec::with_capacity(spec.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..spec.epochs {
        let lr = spec.lr_at(epoch);
        opt.set_lr(lr);
        let mut rng = rng_from_seed(named_seed(spec.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for idx in order.chunks(spec.batch_size).filter(|c| c.len() >= 2) {
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut tape = Tape::<f32>::new();
            let fwd = model.forward_on(&mut tape, &train.batch(idx), Mode::Train, true, &mut rng)?;
            let loss = tape.softmax_xent(fwd.logits, &labels)?;
            let l = tape.value(loss).data()[0] as f64;
            if !l.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            let logits = tape.value(fwd.logits);
            let c = backbone.n_classes;
            for (row, &y) in logits.data().chunks(c).zip(&labels) {
                let pred = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                correct += usize::from(pred == y);
            }
            loss_sum += l * idx.len() as f64;
            seen += idx.len();
            tape.backward(loss)?;
            let grads: Vec<Vec<f32>> = fwd
                .params
                .iter()
                .map(|&p| tape.grad(p).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(p).len()]))
                .collect();
            drop(tape);
            if let Some((name, _)) = names.iter().zip(&grads).find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numerical(format!("non-finite gradient for `{name}` at epoch {epoch}")));
            }
            for (slot, ((p, g), name)) in model.params_mut().iter_mut().zip(&grads).zip(&names).enumerate() {
                opt.step(slot, name, p.data_mut(), g)?;
            }
            model.update_running_stats(&fwd.batch_stats)?;
        }
        history.push(EpochStats {
            epoch,
            lr,
            loss: loss_sum / seen.max(1) as f64,
            accuracy: correct as f64 / seen.max(1) as f64,
        });
        log::debug!(
            "epoch {epoch}: lr {lr:.4} loss {:.4} acc {:.3}",
            history[epoch].loss,
            history[epoch].accuracy
        );
        if epoch >= spec.swa_start() {
            let w = model.flatten();
            swa.update(&w)?;
            swag.update(&w)?;
        }
    }
    // the exponential running averages are too noisy next to the small
    // between-class differences; recompute them for the final weights
    bn_refresh(&mut model, train, spec.batch_size)?;
    Ok(TrainOutput {
        model,
        swa,
        swag,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_then_holds() {
        let s = TrainingSpec::default();
        assert_eq!(s.swa_epochs(), 12);
        assert_eq!(s.lr_at(0), s.lr);
        assert!(s.lr_at(20) < s.lr && s.lr_at(20) > s.swa_lr);
        assert_eq!(s.lr_at(48), s.swa_lr);
        assert_eq!(s.lr_at(59), s.swa_lr);
    }
}
