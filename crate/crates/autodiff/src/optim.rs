use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One SGD-with-momentum update of a single parameter slice:
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
///
/// The gradient is validated before anything is written, so a non-finite
/// gradient leaves `param` and `velocity` untouched.
pub fn sgd_step<T: Real>(
    name: &str,
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    cfg: &SgdConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(AutodiffError::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(AutodiffError::Shape(format!(
            "`{name}`: param/grad/velocity lengths {}/{}/{}",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    if let Some((index, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(AutodiffError::NonFiniteGradient {
            param: name.to_string(),
            index,
            value: g.as_f64(),
        });
    }
    let (lr, mom, wd) = (T::from_f64(cfg.lr), T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mom * *v + g + wd * *p;
        *p = *p - lr * *v;
    }
    Ok(())
}

/// Momentum buffers for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: SgdConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            config,
            velocity: sizes.into_iter().map(|n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.velocity
    }

    /// Update slot `slot`. All gradients of a step should be checked by the
    /// caller first if a partial update must be avoided.
    pub fn step(&mut self, slot: usize, name: &str, param: &mut [T], grad: &[T]) -> Result<()> {
        let velocity = self
            .velocity
            .get_mut(slot)
            .ok_or_else(|| AutodiffError::Config(format!("no optimizer slot {slot} for `{name}`")))?;
        sgd_step(name, param, grad, velocity, &self.config)
    }
}
