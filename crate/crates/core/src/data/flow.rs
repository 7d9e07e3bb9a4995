//! Middlebury `.flo` files and the optical-flow colour wheel.

use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Components at or beyond this magnitude mark unknown flow (Middlebury convention).
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;

/// Dense per-pixel displacement `(u, v)` in pixels per frame; `u` points
/// right and `v` points down.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, vectors: Vec<[f32; 2]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFlow(format!("empty field {width}x{height}")));
        }
        if vectors.len() != width * height {
            return Err(Error::InvalidFlow(format!(
                "{width}x{height} field needs {} vectors, got {}",
                width * height,
                vectors.len()
            )));
        }
        Ok(FlowField { width, height, vectors })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            vectors: vec![[0.0, 0.0]; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let vectors = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        FlowField { width, height, vectors }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.vectors[y * self.width + x]
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    pub fn is_known(v: [f32; 2]) -> bool {
        v.iter().all(|c| c.is_finite() && c.abs() < UNKNOWN_FLOW_THRESHOLD)
    }
}

/// Parses a Middlebury `.flo` buffer.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(Error::NotFlo { magic: f32::NAN });
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::NotFlo { magic });
    }
    if bytes.len() < 12 {
        return Err(Error::FloSizeMismatch {
            expected: 8,
            actual: bytes.len() - 4,
        });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::InvalidFlow(format!("bad dimensions {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let payload = &bytes[12..];
    let expected = width * height * 2 * 4;
    if payload.len() != expected {
        return Err(Error::FloSizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let vectors = payload
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            ]
        })
        .collect();
    FlowField::new(width, height, vectors)
}

pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.vectors.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for [u, v] in &flow.vectors {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    read_flo(&bytes).map_err(|e| Error::file(path, e))
}

pub fn save_flo(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, write_flo(flow)).map_err(|e| Error::file(path, e))
}

/// How vector magnitudes are scaled onto the wheel radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowNormalization {
    /// Divide by the largest known magnitude in the field.
    PerFrameMax,
    /// Divide by a fixed magnitude; longer vectors are darkened.
    Fixed(f32),
}

/// Segment lengths of the Middlebury wheel: red→yellow→green→cyan→blue→magenta→red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

pub const WHEEL_SIZE: usize = 55;

/// The 55-entry piecewise-linear colour wheel, RGB in `[0, 255]`.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(WHEEL_SIZE);
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS;
    let ramp = |i: usize, n: usize| 255.0 * i as f64 / n as f64;
    wheel.extend((0..ry).map(|i| [255.0, ramp(i, ry), 0.0]));
    wheel.extend((0..yg).map(|i| [255.0 - ramp(i, yg), 255.0, 0.0]));
    wheel.extend((0..gc).map(|i| [0.0, 255.0, ramp(i, gc)]));
    wheel.extend((0..cb).map(|i| [0.0, 255.0 - ramp(i, cb), 255.0]));
    wheel.extend((0..bm).map(|i| [ramp(i, bm), 0.0, 255.0]));
    wheel.extend((0..mr).map(|i| [255.0, 0.0, 255.0 - ramp(i, mr)]));
    wheel
}

/// Angular distance between adjacent wheel entries.
pub fn wheel_step() -> f64 {
    std::f64::consts::TAU / WHEEL_SIZE as f64
}

/// Colour-codes a flow field.
///
/// Hue is the direction `atan2(v, u)` measured from `+u`, one wheel entry per
/// [`wheel_step`], interpolated linearly between entries. The normalized
/// magnitude `r` desaturates toward white (`r = 0` is white, `r = 1` is the
/// pure wheel colour); with a fixed cap, `r > 1` is dimmed to 75 %. Unknown
/// vectors are black.
pub fn colorize_flow(flow: &FlowField, normalization: FlowNormalization) -> RgbImage {
    let wheel = color_wheel();
    let scale = match normalization {
        FlowNormalization::PerFrameMax => flow
            .vectors
            .iter()
            .filter(|v| FlowField::is_known(**v))
            .map(|&[u, v]| (u as f64).hypot(v as f64))
            .fold(0.0, f64::max),
        FlowNormalization::Fixed(cap) => cap as f64,
    };
    let mut img = RgbImage::new(flow.width as u32, flow.height as u32);
    for (px, &vec) in img.pixels_mut().zip(&flow.vectors) {
        if !FlowField::is_known(vec) {
            px.0 = [0, 0, 0];
            continue;
        }
        let (u, v) = (vec[0] as f64, vec[1] as f64);
        let rad = if scale > 0.0 { u.hypot(v) / scale } else { 0.0 };
        let angle = v.atan2(u).rem_euclid(std::f64::consts::TAU);
        let pos = angle / wheel_step();
        let k0 = (pos.floor() as usize) % WHEEL_SIZE;
        let k1 = (k0 + 1) % WHEEL_SIZE;
        let f = pos - pos.floor();
        for ch in 0..3 {
            let base = ((1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch]) / 255.0;
            let col = if rad <= 1.0 {
                1.0 - rad * (1.0 - base)
            } else {
                base * 0.75
            };
            px.0[ch] = (255.0 * col).floor().clamp(0.0, 255.0) as u8;
        }
    }
    img
}
