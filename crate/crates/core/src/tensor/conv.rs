use serde::{Deserialize, Serialize};

use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Zero padding of `dilation * (kernel - 1) / 2` on every side; keeps the
    /// spatial size at stride 1.
    SameResolution,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub has_bias: bool,
    pub padding: Padding,
}

impl ConvSpec {
    /// 3×3, stride 1, same-resolution padding, with bias.
    pub fn same3x3(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: 3,
            dilation,
            stride: 1,
            has_bias: true,
            padding: Padding::SameResolution,
        }
    }

    /// 1×1 channel mix.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: 1,
            dilation: 1,
            stride: 1,
            has_bias: true,
            padding: Padding::None,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Fan-in used for He initialization.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn pad(&self) -> usize {
        match self.padding {
            Padding::SameResolution => self.dilation * (self.kernel - 1) / 2,
            Padding::None => 0,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let (ph, pw) = (h + 2 * self.pad(), w + 2 * self.pad());
        if ph < span || pw < span {
            return Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} is smaller than the dilated kernel span {span}"),
            ));
        }
        Ok(((ph - span) / self.stride + 1, (pw - span) / self.stride + 1))
    }

    fn validate(&self) -> Result<()> {
        if self.kernel != 1 && self.kernel != 3 {
            return Err(Error::invalid("conv2d", format!("kernel {} is not 1 or 3", self.kernel)));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.dilation == 0 || self.stride == 0 {
            return Err(Error::invalid("conv2d", format!("degenerate spec {self:?}")));
        }
        Ok(())
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self, spec: &ConvSpec) -> usize {
        self.c * spec.kernel * spec.kernel
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_direct(&self, spec: &ConvSpec) -> bool {
        spec.kernel == 1 && spec.stride == 1 && spec.pad() == 0
    }
}

fn im2col(spec: &ConvSpec, g: &Geometry, x: &[f64], cols: &mut [f64]) {
    let (k, d, s, pad) = (spec.kernel, spec.dilation, spec.stride, spec.pad() as isize);
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * s + ki * d) as isize - pad;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kj * d) as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(spec: &ConvSpec, g: &Geometry, cols: &[f64], dx: &mut [f64]) {
    let (k, d, s, pad) = (spec.kernel, spec.dilation, spec.stride, spec.pad() as isize);
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * s + ki * d) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * s + kj * d) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a·b + beta * c` for row-major operands given by (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller's slices cover every element addressed by the given
    // dimensions and strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D cross-correlation of a `[N, C, H, W]` input with `[C', C, k, k]`
/// weights, honouring `spec`'s dilation, stride and padding.
pub fn conv2d(input: &Tensor, spec: &ConvSpec, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    spec.validate()?;
    let [n, c, h, w] = input.dims4("conv2d")?;
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input channels: spec expects {}, input has {c}", spec.in_channels),
        ));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!("weights: expected {:?}, got {:?}", spec.weight_shape(), weight.shape()),
        ));
    }
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.shape() != [spec.out_channels] => {
            return Err(Error::shape(
                "conv2d",
                format!("bias: expected [{}], got {:?}", spec.out_channels, b.shape()),
            ))
        }
        (true, None) => return Err(Error::shape("conv2d", "bias: spec has a bias but none was given")),
        (false, Some(_)) => return Err(Error::shape("conv2d", "bias: spec has no bias but one was given")),
        _ => {}
    }
    let (oh, ow) = spec.output_size(h, w)?;
    let g = Geometry { c, h, w, oh, ow };
    let (rows, p, co) = (g.rows(spec), g.cols(), spec.out_channels);

    let mut out = vec![0.0; n * co * p];
    let mut cols = if g.is_direct(spec) { Vec::new() } else { vec![0.0; rows * p] };
    for s in 0..n {
        let x = &input.data()[s * c * h * w..(s + 1) * c * h * w];
        let y = &mut out[s * co * p..(s + 1) * co * p];
        if let Some(b) = bias {
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.fill(b.data()[o]);
            }
        }
        let src: &[f64] = if g.is_direct(spec) {
            x
        } else {
            im2col(spec, &g, x, &mut cols);
            &cols
        };
        gemm(co, rows, p, weight.data(), (rows, 1), src, (p, 1), 1.0, y);
    }

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(vec![n, co, oh, ow], out, parents, Op::Conv(*spec)))
}

pub(crate) fn backward(spec: &ConvSpec, parents: &[Tensor], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (input, weight) = (&parents[0], &parents[1]);
    let bias = parents.get(2);
    let [n, c, h, w] = super::ops::dims(input.shape());
    let (oh, ow) = spec.output_size(h, w).expect("validated in forward");
    let g = Geometry { c, h, w, oh, ow };
    let (rows, p, co) = (g.rows(spec), g.cols(), spec.out_channels);
    let direct = g.is_direct(spec);

    let mut dx = input.requires_grad().then(|| vec![0.0; input.len()]);
    let mut dw = weight.requires_grad().then(|| vec![0.0; weight.len()]);
    let mut db = bias.filter(|b| b.requires_grad()).map(|_| vec![0.0; co]);

    let mut cols = if direct { Vec::new() } else { vec![0.0; rows * p] };
    let mut dcols = vec![0.0; rows * p];
    for s in 0..n {
        let x = &input.data()[s * c * h * w..(s + 1) * c * h * w];
        let gy = &grad[s * co * p..(s + 1) * co * p];
        if let Some(dw) = dw.as_mut() {
            let src: &[f64] = if direct {
                x
            } else {
                im2col(spec, &g, x, &mut cols);
                &cols
            };
            // dW[co, rows] += dY[co, p] · colsᵀ[p, rows]
            gemm(co, p, rows, gy, (p, 1), src, (1, p), 1.0, dw);
        }
        if let Some(db) = db.as_mut() {
            for (o, row) in gy.chunks(p).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[rows, p] = Wᵀ[rows, co] · dY[co, p]
            gemm(rows, co, p, weight.data(), (1, rows), gy, (p, 1), 0.0, &mut dcols);
            let dst = &mut dx[s * c * h * w..(s + 1) * c * h * w];
            if direct {
                dst.iter_mut().zip(&dcols).for_each(|(d, v)| *d += v);
            } else {
                col2im(spec, &g, &dcols, dst);
            }
        }
    }
    let mut grads = vec![dx, dw];
    if bias.is_some() {
        grads.push(db);
    }
    grads
}
