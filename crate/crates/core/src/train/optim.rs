use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Samples from `N(0, 2 / fan_in)`.
pub fn kaiming_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    Tensor::new(shape, kaiming_values(shape.iter().product(), fan_in, rng)?)
}

pub(crate) fn kaiming_values(n: usize, fan_in: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if fan_in == 0 {
        return Err(Error::invalid("kaiming_init", "fan_in must be positive"));
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    Ok((0..n).map(|_| normal.sample(rng)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    /// One buffer per parameter, created on first update.
    pub velocity: ParamStore,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Sgd {
            config,
            velocity: ParamStore::new(),
        }
    }

    pub fn with_state(config: SgdConfig, velocity: ParamStore) -> Self {
        Sgd { config, velocity }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        let SgdConfig { momentum, weight_decay } = self.config;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if g.len() != p.data.len() {
                return Err(Error::shape("Sgd::step", format!("{name}: gradient length {}", g.len())));
            }
            if !self.velocity.contains(name) {
                self.velocity.insert(name.clone(), &p.shape, vec![0.0; g.len()])?;
            }
            let v = &mut self.velocity.get_mut(name)?.data;
            for ((w, v), &g) in p.data.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = momentum * *v + g + weight_decay * *w;
                *w -= lr * *v;
            }
        }
        Ok(())
    }
}
