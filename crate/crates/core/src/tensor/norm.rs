use serde::{Deserialize, Serialize};

use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        }
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

pub struct BatchNormOutput {
    pub output: Tensor,
    /// Batch statistics in train mode (variance unbiased), for the running update.
    pub batch_mean: Option<Vec<f64>>,
    pub batch_var: Option<Vec<f64>>,
}

pub(crate) struct Saved {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: NormMode,
}

/// Per-channel affine normalization over the batch and both spatial axes.
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &RunningStats,
    mode: NormMode,
) -> Result<BatchNormOutput> {
    let [n, c, h, w] = input.dims4("batch_norm")?;
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!("{name}: expected [{c}], got {:?}", t.shape()),
            ));
        }
    }
    if stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("running stats have {} channels, input has {c}", stats.mean.len()),
        ));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = input.data();
    let channel = |ch: usize| (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);

    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let m = channel(ch).map(|i| x[i]).sum::<f64>() / count;
                mean[ch] = m;
                var[ch] = channel(ch).map(|i| (x[i] - m).powi(2)).sum::<f64>() / count;
            }
            (mean, var)
        }
        NormMode::Eval => (stats.mean.clone(), stats.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();

    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for i in channel(ch) {
            let z = (x[i] - mean[ch]) * inv_std[ch];
            xhat[i] = z;
            out[i] = g * z + b;
        }
    }

    let (batch_mean, batch_var) = match mode {
        NormMode::Train => {
            let correction = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let unbiased = var.iter().map(|v| v * correction).collect();
            (Some(mean), Some(unbiased))
        }
        NormMode::Eval => (None, None),
    };
    let output = Tensor::from_op(
        input.shape().to_vec(),
        out,
        vec![input.clone(), gamma.clone(), beta.clone()],
        Op::BatchNorm(Saved { xhat, inv_std, mode }),
    );
    Ok(BatchNormOutput {
        output,
        batch_mean,
        batch_var,
    })
}

/// Batch normalization followed by `max(0, ·)`. In train mode `stats` is
/// updated with the batch statistics.
pub fn batchnorm_relu(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: NormMode,
) -> Result<Tensor> {
    let bn = batch_norm(input, gamma, beta, stats, mode)?;
    if let (Some(m), Some(v)) = (&bn.batch_mean, &bn.batch_var) {
        stats.update(m, v);
    }
    Ok(bn.output.relu())
}

pub(crate) fn backward(saved: &Saved, parents: &[Tensor], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (input, gamma, beta) = (&parents[0], &parents[1], &parents[2]);
    let [n, c, h, w] = super::ops::dims(input.shape());
    let plane = h * w;
    let count = (n * plane) as f64;
    let channel = |ch: usize| (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        for i in channel(ch) {
            dgamma[ch] += grad[i] * saved.xhat[i];
            dbeta[ch] += grad[i];
        }
    }

    let dx = input.requires_grad().then(|| {
        let mut dx = vec![0.0; input.len()];
        for ch in 0..c {
            let g = gamma.data()[ch];
            let k = g * saved.inv_std[ch];
            match saved.mode {
                NormMode::Eval => {
                    for i in channel(ch) {
                        dx[i] = k * grad[i];
                    }
                }
                NormMode::Train => {
                    // dxhat = g·dy; dx = inv_std/M · (M·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    let (sum_dy, sum_dy_xhat) = (dbeta[ch], dgamma[ch]);
                    for i in channel(ch) {
                        dx[i] = k / count * (count * grad[i] - sum_dy - saved.xhat[i] * sum_dy_xhat);
                    }
                }
            }
        }
        dx
    });
    vec![
        dx,
        gamma.requires_grad().then_some(dgamma),
        beta.requires_grad().then_some(dbeta),
    ]
}
