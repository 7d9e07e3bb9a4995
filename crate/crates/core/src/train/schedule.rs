use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `base_lr · gamma^⌊epoch / every⌋`.
pub fn step_lr(epoch: usize, base_lr: f64, every: usize, gamma: f64) -> f64 {
    base_lr * gamma.powi((epoch / every.max(1)) as i32)
}

/// `base_lr · (1 − iter / max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, base_lr: f64, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::invalid("poly_lr", "max_iter must be positive"));
    }
    if iter > max_iter {
        return Err(Error::invalid("poly_lr", format!("iter {iter} beyond max_iter {max_iter}")));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrPolicy {
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
    /// Decay per iteration towards zero at the final iteration.
    Poly { power: f64 },
}

impl Default for LrPolicy {
    fn default() -> Self {
        LrPolicy::Step { every: 5, gamma: 0.1 }
    }
}

impl LrPolicy {
    /// Rate for iteration `iter` (global, zero-based) in epoch `epoch`.
    pub fn rate(&self, base_lr: f64, epoch: usize, iter: usize, max_iter: usize) -> Result<f64> {
        match *self {
            LrPolicy::Step { every, gamma } => Ok(step_lr(epoch, base_lr, every, gamma)),
            LrPolicy::Poly { power } => poly_lr(iter, max_iter, base_lr, power),
        }
    }
}
