use super::conv::{self, ConvSpec};
use super::norm;
use super::spatial;
use super::Tensor;
use crate::error::{Error, Result};

/// Recorded operation with the state its backward rule needs.
pub(crate) enum Op {
    Add,
    Sub,
    /// `b` is either the same shape as `a` or a `[N,1,H,W]` map.
    Mul {
        broadcast: bool,
    },
    Scale(f64),
    Sum,
    Mean,
    Relu,
    Sigmoid,
    Conv(ConvSpec),
    BatchNorm(norm::Saved),
    AvgPool {
        stride: usize,
    },
    ReplicatePad {
        in_h: usize,
        in_w: usize,
    },
    Upsample {
        factor: usize,
    },
    Crop {
        in_h: usize,
        in_w: usize,
    },
    Concat {
        channels: Vec<usize>,
    },
    /// One half of a gate partition; `gate` is `[N,1,H,W]`.
    Gate {
        gate: Vec<f64>,
        foreground: bool,
    },
    Bce {
        target: Vec<f64>,
    },
}

impl Op {
    pub(crate) fn backward(
        &self,
        parents: &[Tensor],
        out: &Tensor,
        grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        match self {
            Op::Add => vec![Some(grad.to_vec()), Some(grad.to_vec())],
            Op::Sub => vec![
                Some(grad.to_vec()),
                Some(grad.iter().map(|g| -g).collect()),
            ],
            Op::Mul { broadcast } => mul_backward(&parents[0], &parents[1], *broadcast, grad),
            Op::Scale(k) => vec![Some(grad.iter().map(|g| g * k).collect())],
            Op::Sum => vec![Some(vec![grad[0]; parents[0].len()])],
            Op::Mean => {
                let n = parents[0].len();
                vec![Some(vec![grad[0] / n as f64; n])]
            }
            Op::Relu => vec![Some(
                parents[0]
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            )],
            Op::Sigmoid => vec![Some(
                out.data()
                    .iter()
                    .zip(grad)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect(),
            )],
            Op::Conv(spec) => conv::backward(spec, parents, grad),
            Op::BatchNorm(saved) => norm::backward(saved, parents, grad),
            Op::AvgPool { stride } => {
                vec![Some(spatial::avg_pool_backward(parents[0].shape(), *stride, grad))]
            }
            Op::ReplicatePad { in_h, in_w } => vec![Some(spatial::replicate_pad_backward(
                out.shape(),
                *in_h,
                *in_w,
                grad,
            ))],
            Op::Upsample { factor } => vec![Some(spatial::upsample_backward(
                parents[0].shape(),
                *factor,
                grad,
            ))],
            Op::Crop { in_h, in_w } => {
                vec![Some(spatial::crop_backward(out.shape(), *in_h, *in_w, grad))]
            }
            Op::Concat { channels } => concat_backward(out.shape(), channels, grad),
            Op::Gate { gate, foreground } => {
                let [n, c, h, w] = dims(out.shape());
                let plane = h * w;
                let mut dx = vec![0.0; grad.len()];
                for b in 0..n {
                    let g = &gate[b * plane..(b + 1) * plane];
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in 0..plane {
                            let weight = if *foreground { g[i] } else { 1.0 - g[i] };
                            dx[off + i] = grad[off + i] * weight;
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::Bce { target } => {
                let n = target.len() as f64;
                let dx = parents[0]
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&x, &y)| grad[0] * (sigmoid(x) - y) / n)
                    .collect();
                vec![Some(dx)]
            }
        }
    }
}

pub(crate) fn dims(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_kind(a: &Tensor, b: &Tensor, op: &'static str) -> Result<bool> {
    if a.shape() == b.shape() {
        return Ok(false);
    }
    if let ([n, _, h, w], [bn, 1, bh, bw]) = (a.shape(), b.shape()) {
        if n == bn && h == bh && w == bw {
            return Ok(true);
        }
    }
    Err(Error::shape(
        op,
        format!(
            "cannot combine {:?} with {:?}; expected equal shapes or a [N,1,H,W] map",
            a.shape(),
            b.shape()
        ),
    ))
}

fn mul_backward(a: &Tensor, b: &Tensor, broadcast: bool, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (ad, bd) = (a.data(), b.data());
    if !broadcast {
        let da = a
            .requires_grad()
            .then(|| grad.iter().zip(bd).map(|(g, y)| g * y).collect());
        let db = b
            .requires_grad()
            .then(|| grad.iter().zip(ad).map(|(g, x)| g * x).collect());
        return vec![da, db];
    }
    let [n, c, h, w] = dims(a.shape());
    let plane = h * w;
    let mut da = vec![0.0; ad.len()];
    let mut db = vec![0.0; bd.len()];
    for s in 0..n {
        let bmap = &bd[s * plane..(s + 1) * plane];
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            for i in 0..plane {
                da[off + i] = grad[off + i] * bmap[i];
                db[s * plane + i] += grad[off + i] * ad[off + i];
            }
        }
    }
    vec![a.requires_grad().then_some(da), b.requires_grad().then_some(db)]
}

fn concat_backward(out_shape: &[usize], channels: &[usize], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
    let [n, c_total, h, w] = dims(out_shape);
    let plane = h * w;
    let mut grads: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(n * c * plane)).collect();
    for s in 0..n {
        let mut start = 0;
        for (g, &c) in grads.iter_mut().zip(channels) {
            let off = (s * c_total + start) * plane;
            g.extend_from_slice(&grad[off..off + c * plane]);
            start += c;
        }
    }
    grads.into_iter().map(Some).collect()
}

impl Tensor {
    fn zip_same(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip_same(other, "add", |a, b| a + b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), data, vec![self.clone(), other.clone()], Op::Add))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip_same(other, "sub", |a, b| a - b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), data, vec![self.clone(), other.clone()], Op::Sub))
    }

    /// Elementwise product. `other` may also be a `[N,1,H,W]` map, which is
    /// broadcast over the channels of a `[N,C,H,W]` tensor.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let broadcast = broadcast_kind(self, other, "elementwise_mul")?;
        let data = if broadcast {
            let [n, c, h, w] = dims(self.shape());
            let plane = h * w;
            let mut out = Vec::with_capacity(self.len());
            for s in 0..n {
                let bmap = &other.data()[s * plane..(s + 1) * plane];
                for ch in 0..c {
                    let off = (s * c + ch) * plane;
                    out.extend(self.data()[off..off + plane].iter().zip(bmap).map(|(a, b)| a * b));
                }
            }
            out
        } else {
            self.zip_same(other, "elementwise_mul", |a, b| a * b)?
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Op::Mul { broadcast },
        ))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * k).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], Op::Scale(k))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![total], vec![self.clone()], Op::Sum)
    }

    pub fn mean(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![total / self.len() as f64], vec![self.clone()], Op::Mean)
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x.max(0.0)).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], Op::Relu)
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.data().iter().map(|&x| sigmoid(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], Op::Sigmoid)
    }
}

/// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = p.dims4("concat_channels")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", first.shape(), p.shape()),
            ));
        }
        channels.push(pc);
    }
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c_total * plane);
    for s in 0..n {
        for (p, &c) in parts.iter().zip(&channels) {
            let off = s * c * plane;
            data.extend_from_slice(&p.data()[off..off + c * plane]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, c_total, h, w],
        data,
        parts.iter().map(|&p| p.clone()).collect(),
        Op::Concat { channels },
    ))
}

/// Splits `x` into `(x ⊙ g, x ⊙ (1 − g))` for a `[N,1,H,W]` gate `g` with
/// values in `[0, 1]`, broadcast over channels.
///
/// Per element, the larger share is a rounded product and the smaller share is
/// the exact remainder `x − larger` (exact because `larger ∈ [x/2, x]`), so the
/// two halves sum back to `x` with no rounding. Gradients are the analytic
/// `g` and `1 − g`; the gate itself is treated as a constant.
pub fn split_by_gate(x: &Tensor, gate: &Tensor) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = x.dims4("split_by_gate")?;
    if gate.shape() != [n, 1, h, w] {
        return Err(Error::shape(
            "split_by_gate",
            format!("gate {:?} does not match features {:?}", gate.shape(), x.shape()),
        ));
    }
    if let Some(bad) = gate.data().iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::invalid("split_by_gate", format!("gate value {bad} outside [0, 1]")));
    }
    let plane = h * w;
    let mut fg = Vec::with_capacity(x.len());
    let mut bg = Vec::with_capacity(x.len());
    for s in 0..n {
        let g = &gate.data()[s * plane..(s + 1) * plane];
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            for (&v, &gv) in x.data()[off..off + plane].iter().zip(g) {
                if gv >= 0.5 {
                    let f = v * gv;
                    fg.push(f);
                    bg.push(v - f);
                } else {
                    let b = v * (1.0 - gv);
                    fg.push(v - b);
                    bg.push(b);
                }
            }
        }
    }
    let gate_data = gate.data().to_vec();
    let f = Tensor::from_op(
        x.shape().to_vec(),
        fg,
        vec![x.clone()],
        Op::Gate {
            gate: gate_data.clone(),
            foreground: true,
        },
    );
    let b = Tensor::from_op(
        x.shape().to_vec(),
        bg,
        vec![x.clone()],
        Op::Gate {
            gate: gate_data,
            foreground: false,
        },
    );
    Ok((f, b))
}

/// Mean binary cross-entropy between logits and `{0, 1}` (or soft) targets,
/// in the overflow-free form `max(x, 0) − x·y + ln(1 + e^{−|x|})`.
pub fn bce_with_logits(logits: &Tensor, target: &[f64]) -> Result<Tensor> {
    if logits.len() != target.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} logits vs {} targets", logits.len(), target.len()),
        ));
    }
    let total: f64 = logits
        .data()
        .iter()
        .zip(target)
        .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
        .sum();
    Ok(Tensor::from_op(
        Vec::new(),
        vec![total / target.len() as f64],
        vec![logits.clone()],
        Op::Bce {
            target: target.to_vec(),
        },
    ))
}
