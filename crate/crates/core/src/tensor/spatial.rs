use super::ops::{dims, Op};
use super::Tensor;
use crate::error::{Error, Result};

/// Mean over non-overlapping `stride × stride` blocks. Sizes that are not a
/// multiple of `stride` are first extended by replicating the bottom row and
/// right column, so the output is `ceil(H/stride) × ceil(W/stride)`.
pub fn avg_pool(input: &Tensor, stride: usize) -> Result<Tensor> {
    if stride < 1 {
        return Err(Error::invalid("avg_pool", "stride must be at least 1"));
    }
    let [n, c, h, w] = input.dims4("avg_pool")?;
    if h % stride != 0 || w % stride != 0 {
        let padded = replicate_pad_to_multiple(input, stride)?;
        return avg_pool(&padded, stride);
    }
    let (oh, ow) = (h / stride, w / stride);
    let area = (stride * stride) as f64;
    let x = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let drow = &mut dst[(y / stride) * ow..(y / stride + 1) * ow];
            for (xi, v) in row.iter().enumerate() {
                drow[xi / stride] += v;
            }
        }
        dst.iter_mut().for_each(|v| *v /= area);
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![input.clone()],
        Op::AvgPool { stride },
    ))
}

pub(crate) fn avg_pool_backward(in_shape: &[usize], stride: usize, grad: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = dims(in_shape);
    let (oh, ow) = (h / stride, w / stride);
    let area = (stride * stride) as f64;
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let g = &grad[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for xi in 0..w {
                d[y * w + xi] = g[(y / stride) * ow + xi / stride] / area;
            }
        }
    }
    dx
}

/// Extends the bottom/right edges by replication up to the next multiple of `multiple`.
pub fn replicate_pad_to_multiple(input: &Tensor, multiple: usize) -> Result<Tensor> {
    if multiple < 1 {
        return Err(Error::invalid("replicate_pad", "multiple must be at least 1"));
    }
    let [n, c, h, w] = input.dims4("replicate_pad")?;
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return Ok(input.clone());
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for y in 0..ph {
            let row = &src[y.min(h - 1) * w..(y.min(h - 1) + 1) * w];
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(row[w - 1], pw - w));
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, ph, pw],
        out,
        vec![input.clone()],
        Op::ReplicatePad { in_h: h, in_w: w },
    ))
}

pub(crate) fn replicate_pad_backward(out_shape: &[usize], h: usize, w: usize, grad: &[f64]) -> Vec<f64> {
    let [n, c, ph, pw] = dims(out_shape);
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let g = &grad[plane * ph * pw..(plane + 1) * ph * pw];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..ph {
            for xi in 0..pw {
                d[y.min(h - 1) * w + xi.min(w - 1)] += g[y * pw + xi];
            }
        }
    }
    dx
}

/// Source taps for bilinear resampling along one axis with half-pixel
/// centres: output `o` samples input coordinate `(o + 0.5)/factor − 0.5`,
/// clamped to the valid range.
fn taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let t = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, t)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor (half-pixel alignment, edge clamped).
pub fn bilinear_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::invalid("bilinear_upsample", "factor must be at least 1"));
    }
    let [n, c, h, w] = input.dims4("bilinear_upsample")?;
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h * factor, w * factor);
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
            for &(x0, x1, fx) in &tx {
                let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                let bottom = r1[x0] + fx * (r1[x1] - r1[x0]);
                out.push(top + fy * (bottom - top));
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![input.clone()],
        Op::Upsample { factor },
    ))
}

pub(crate) fn upsample_backward(in_shape: &[usize], factor: usize, grad: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = dims(in_shape);
    let (oh, ow) = (h * factor, w * factor);
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let g = &grad[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                d[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                d[y0 * w + x1] += v * (1.0 - fy) * fx;
                d[y1 * w + x0] += v * fy * (1.0 - fx);
                d[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

/// Keeps the top-left `height × width` window.
pub fn crop(input: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("crop")?;
    if height > h || width > w || height == 0 || width == 0 {
        return Err(Error::shape(
            "crop",
            format!("cannot crop {h}x{w} to {height}x{width}"),
        ));
    }
    if (height, width) == (h, w) {
        return Ok(input.clone());
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * height * width);
    for plane in 0..n * c {
        for y in 0..height {
            let off = plane * h * w + y * w;
            out.extend_from_slice(&x[off..off + width]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, height, width],
        out,
        vec![input.clone()],
        Op::Crop { in_h: h, in_w: w },
    ))
}

pub(crate) fn crop_backward(out_shape: &[usize], h: usize, w: usize, grad: &[f64]) -> Vec<f64> {
    let [n, c, oh, ow] = dims(out_shape);
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        for y in 0..oh {
            let off = plane * h * w + y * w;
            dx[off..off + ow].copy_from_slice(&grad[(plane * oh + y) * ow..(plane * oh + y + 1) * ow]);
        }
    }
    dx
}
