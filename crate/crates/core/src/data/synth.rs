//! Procedural desk-scale sequences with exact ground truth.
//!
//! A textured object translates over a textured background that drifts
//! slowly (camera motion). Optional distractor objects move the same way but
//! are not annotated, so telling them apart from the target needs the guide.
//! Guide masks are the ground truth passed through [`GuideNoise`], which
//! mimics the failure modes of an external segmentation algorithm.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::flow::FlowField;
use super::mask::BinaryMask;
use super::sequence::SequenceRecord;
use crate::error::{Error, Result};

/// Guide algorithm name used for synthetic guides.
pub const SYNTH_GUIDE: &str = "synth";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    /// Star-convex outline with a wavy radius.
    Blob,
    /// Pick one of the above per object.
    Any,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    /// Inclusive range of object width and height in pixels.
    pub min_size: usize,
    pub max_size: usize,
    /// Largest object displacement in pixels per frame.
    pub max_speed: f64,
    /// Largest background (camera) drift in pixels per frame.
    pub max_drift: f64,
    /// Unannotated moving objects sharing the target's appearance statistics.
    pub distractors: usize,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        ObjectSpec {
            shape: ShapeKind::Any,
            min_size: 28,
            max_size: 48,
            max_speed: 3.0,
            max_drift: 0.75,
            distractors: 0,
        }
    }
}

/// Corruptions applied independently per frame to turn ground truth into a guide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideNoise {
    /// Boundary dilation (positive) or erosion (negative), drawn uniformly from
    /// `[-max_boundary_shift, max_boundary_shift]` unless `fixed_boundary_shift` is set.
    pub max_boundary_shift: usize,
    pub fixed_boundary_shift: Option<i32>,
    /// Largest rigid misalignment in pixels along each axis.
    pub max_offset: usize,
    pub hole_probability: f64,
    pub false_positive_probability: f64,
    /// Radius range of punched holes and spurious blobs.
    pub blob_radius: (usize, usize),
}

impl GuideNoise {
    pub fn none() -> Self {
        GuideNoise {
            max_boundary_shift: 0,
            fixed_boundary_shift: None,
            max_offset: 0,
            hole_probability: 0.0,
            false_positive_probability: 0.0,
            blob_radius: (3, 6),
        }
    }

    /// Deterministic square dilation by `pixels` (erosion when negative).
    pub fn fixed_shift(pixels: i32) -> Self {
        GuideNoise {
            fixed_boundary_shift: Some(pixels),
            ..GuideNoise::none()
        }
    }

    /// Scalar noise level used by the CLI; `0` leaves the ground truth intact
    /// and `1` gives guides around J ≈ 0.75 on default objects.
    pub fn with_strength(strength: f64) -> Self {
        let s = strength.max(0.0);
        GuideNoise {
            max_boundary_shift: (4.0 * s).round() as usize,
            fixed_boundary_shift: None,
            max_offset: (3.0 * s).round() as usize,
            hole_probability: (0.5 * s).min(1.0),
            false_positive_probability: (0.6 * s).min(1.0),
            blob_radius: (3, 3 + (5.0 * s).round() as usize),
        }
    }

    pub fn is_none(&self) -> bool {
        self.max_boundary_shift == 0
            && self.fixed_boundary_shift.unwrap_or(0) == 0
            && self.max_offset == 0
            && self.hole_probability == 0.0
            && self.false_positive_probability == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub object: ObjectSpec,
    pub guide_noise: GuideNoise,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_frames: 8,
            width: 96,
            height: 96,
            object: ObjectSpec::default(),
            guide_noise: GuideNoise::with_strength(1.0),
        }
    }
}

/// Sum of a few oriented sinusoids around a base colour.
struct Texture {
    base: [f64; 3],
    waves: Vec<([f64; 3], f64, f64, f64)>,
}

impl Texture {
    fn random(rng: &mut impl Rng, base: [f64; 3], amplitude: f64, max_freq: f64) -> Self {
        let waves = (0..3)
            .map(|_| {
                let amp = [0, 1, 2].map(|_| rng.random_range(-amplitude..=amplitude));
                let theta = rng.random_range(0.0..TAU);
                let freq = rng.random_range(0.3 * max_freq..=max_freq);
                (amp, freq * theta.cos(), freq * theta.sin(), rng.random_range(0.0..TAU))
            })
            .collect();
        Texture { base, waves }
    }

    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = self.base;
        for (amp, fx, fy, phase) in &self.waves {
            let s = (TAU * (fx * x + fy * y) + phase).sin();
            for ch in 0..3 {
                c[ch] += amp[ch] * s;
            }
        }
        c
    }
}

struct MovingObject {
    shape: ShapeKind,
    half: (f64, f64),
    /// Blob radius modulation `(amplitude, lobes, phase)`.
    wobble: (f64, f64, f64),
    start: (f64, f64),
    velocity: (f64, f64),
    texture: Texture,
}

impl MovingObject {
    fn center(&self, t: usize) -> (f64, f64) {
        (
            self.start.0 + self.velocity.0 * t as f64,
            self.start.1 + self.velocity.1 * t as f64,
        )
    }

    /// Whether the pixel centre `(px, py)` lies inside the object at frame `t`.
    fn contains(&self, t: usize, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center(t);
        let (dx, dy) = (px - cx, py - cy);
        let (hx, hy) = self.half;
        match self.shape {
            ShapeKind::Rectangle => dx.abs() < hx && dy.abs() < hy,
            ShapeKind::Ellipse => (dx / hx).powi(2) + (dy / hy).powi(2) < 1.0,
            ShapeKind::Blob | ShapeKind::Any => {
                let (a, lobes, phase) = self.wobble;
                let r = (dx / hx).hypot(dy / hy);
                let theta = dy.atan2(dx);
                r < 1.0 - a + a * (lobes * theta + phase).sin()
            }
        }
    }

    fn mask(&self, t: usize, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.contains(t, x as f64 + 0.5, y as f64 + 0.5))
    }
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.random_range(40.0..215.0))
}

fn place_object(
    rng: &mut impl Rng,
    spec: &SynthSpec,
    appearance: &[f64; 3],
) -> Result<MovingObject> {
    let o = &spec.object;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let size_w = rng.random_range(o.min_size..=o.max_size) as f64;
    let size_h = rng.random_range(o.min_size..=o.max_size) as f64;
    let margin = 1.0;
    if size_w + 2.0 * margin > w || size_h + 2.0 * margin > h {
        return Err(Error::invalid(
            "synth_sequence",
            format!("object {size_w}x{size_h} does not fit a {}x{} frame", spec.width, spec.height),
        ));
    }
    let shape = match o.shape {
        ShapeKind::Any => [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Blob][rng.random_range(0..3)],
        s => s,
    };
    let half = (size_w / 2.0, size_h / 2.0);
    let wobble = (
        rng.random_range(0.05..0.15),
        rng.random_range(2..6) as f64,
        rng.random_range(0.0..TAU),
    );
    let speed = rng.random_range(0.3 * o.max_speed..=o.max_speed.max(1e-9));
    let heading = rng.random_range(0.0..TAU);
    let mut velocity = (speed * heading.cos(), speed * heading.sin());
    let steps = spec.n_frames.saturating_sub(1) as f64;
    let (lo_x, hi_x) = (half.0 + margin, w - half.0 - margin);
    let (lo_y, hi_y) = (half.1 + margin, h - half.1 - margin);
    // shrink the motion until the whole trajectory stays in frame
    let start = loop {
        let (tx, ty) = (velocity.0 * steps, velocity.1 * steps);
        let x_range = (lo_x.max(lo_x - tx), hi_x.min(hi_x - tx));
        let y_range = (lo_y.max(lo_y - ty), hi_y.min(hi_y - ty));
        if x_range.0 <= x_range.1 && y_range.0 <= y_range.1 {
            break (
                rng.random_range(x_range.0..=x_range.1),
                rng.random_range(y_range.0..=y_range.1),
            );
        }
        velocity = (velocity.0 * 0.5, velocity.1 * 0.5);
    };
    let base = [0, 1, 2].map(|ch| (appearance[ch] + rng.random_range(-20.0..20.0)).clamp(20.0, 235.0));
    let texture = Texture::random(rng, base, 25.0, 0.12);
    Ok(MovingObject {
        shape,
        half,
        wobble,
        start,
        velocity,
        texture,
    })
}

/// Square-structuring-element dilation (`r > 0`) or erosion (`r < 0`).
pub fn morph_square(mask: &BinaryMask, r: i32) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let k = r.unsigned_abs() as isize;
    let dilate = r > 0;
    let (w, h) = mask.dims();
    // separable: rows then columns
    let pass = |m: &BinaryMask, horizontal: bool| {
        BinaryMask::from_fn(w, h, |x, y| {
            let mut any = false;
            let mut all = true;
            for d in -k..=k {
                let (sx, sy) = if horizontal {
                    (x as isize + d, y as isize)
                } else {
                    (x as isize, y as isize + d)
                };
                // outside the frame counts as background for dilation and
                // foreground for erosion, so borders do not erode the object
                let inside = sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h;
                let v = if inside { m.get(sx as usize, sy as usize) } else { !dilate };
                any |= v;
                all &= v;
            }
            if dilate {
                any
            } else {
                all
            }
        })
    };
    pass(&pass(mask, true), false)
}

fn paint_disc(mask: &mut BinaryMask, cx: f64, cy: f64, radius: f64, value: bool) {
    let (w, h) = mask.dims();
    for y in 0..h {
        for x in 0..w {
            if (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) < radius {
                mask.set(x, y, value);
            }
        }
    }
}

/// Applies one draw of `noise` to a ground-truth mask.
pub fn corrupt_mask(gt: &BinaryMask, noise: &GuideNoise, rng: &mut impl Rng) -> BinaryMask {
    let shift = noise.fixed_boundary_shift.unwrap_or_else(|| {
        let m = noise.max_boundary_shift as i32;
        if m == 0 {
            0
        } else {
            rng.random_range(-m..=m)
        }
    });
    let mut out = morph_square(gt, shift);
    if noise.max_offset > 0 {
        let m = noise.max_offset as i64;
        out = out.translated(rng.random_range(-m..=m) as isize, rng.random_range(-m..=m) as isize);
    }
    let (w, h) = gt.dims();
    let (rmin, rmax) = noise.blob_radius;
    if noise.hole_probability > 0.0 && rng.random_bool(noise.hole_probability.min(1.0)) {
        let inside: Vec<(usize, usize)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| gt.get(x, y))
            .collect();
        if !inside.is_empty() {
            let (x, y) = inside[rng.random_range(0..inside.len())];
            let r = rng.random_range(rmin..=rmax) as f64;
            paint_disc(&mut out, x as f64 + 0.5, y as f64 + 0.5, r, false);
        }
    }
    if noise.false_positive_probability > 0.0 && rng.random_bool(noise.false_positive_probability.min(1.0)) {
        let r = rng.random_range(rmin..=rmax) as f64;
        let x = rng.random_range(0.0..w as f64);
        let y = rng.random_range(0.0..h as f64);
        paint_disc(&mut out, x, y, r, true);
    }
    out
}

/// Generates one sequence; identical seeds give identical records.
pub fn synth_sequence(seed: u64, name: &str, spec: &SynthSpec) -> Result<SequenceRecord> {
    if spec.n_frames == 0 || spec.width == 0 || spec.height == 0 {
        return Err(Error::invalid("synth_sequence", "frames and size must be positive"));
    }
    if spec.object.min_size == 0 || spec.object.min_size > spec.object.max_size {
        return Err(Error::invalid("synth_sequence", "object size range is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);

    let bg_color = random_color(&mut rng);
    let background = Texture::random(&mut rng, bg_color, 30.0, 0.08);
    let mut fg_color = random_color(&mut rng);
    while color_distance(fg_color, bg_color) < 90.0 {
        fg_color = random_color(&mut rng);
    }
    let drift_angle = rng.random_range(0.0..TAU);
    let drift_speed = rng.random_range(0.0..=spec.object.max_drift);
    let drift = (drift_speed * drift_angle.cos(), drift_speed * drift_angle.sin());

    // distractors first so the annotated target is drawn on top
    let mut objects = Vec::with_capacity(spec.object.distractors + 1);
    for _ in 0..spec.object.distractors + 1 {
        objects.push(place_object(&mut rng, spec, &fg_color)?);
    }
    let target_index = objects.len() - 1;

    let noise = Normal::new(0.0, 3.0).unwrap();
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut gts = Vec::with_capacity(spec.n_frames);
    let mut flows = Vec::with_capacity(spec.n_frames.saturating_sub(1));
    for t in 0..spec.n_frames {
        let masks: Vec<BinaryMask> = objects.iter().map(|o| o.mask(t, w, h)).collect();
        let mut frame = RgbImage::new(w as u32, h as u32);
        let mut owner = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                let top = (0..objects.len()).rev().find(|&i| masks[i].get(x, y));
                owner[y * w + x] = top;
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let c = match top {
                    Some(i) => {
                        let (cx, cy) = objects[i].center(t);
                        objects[i].texture.at(px - cx, py - cy)
                    }
                    None => background.at(px - drift.0 * t as f64, py - drift.1 * t as f64),
                };
                let px = c.map(|v| (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
                frame.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        if t + 1 < spec.n_frames {
            flows.push(FlowField::from_fn(w, h, |x, y| {
                let v = match owner[y * w + x] {
                    Some(i) => objects[i].velocity,
                    None => drift,
                };
                [v.0 as f32, v.1 as f32]
            }));
        }
        let gt = masks[target_index].clone();
        frames.push(frame);
        gts.push(gt);
    }

    let guides: Vec<BinaryMask> = gts
        .iter()
        .map(|g| {
            if spec.guide_noise.is_none() {
                g.clone()
            } else {
                corrupt_mask(g, &spec.guide_noise, &mut rng)
            }
        })
        .collect();

    let mut guide_map = BTreeMap::new();
    guide_map.insert(SYNTH_GUIDE.to_string(), guides);
    Ok(SequenceRecord {
        name: name.to_string(),
        frames,
        flows,
        guides: guide_map,
        gt: Some(gts),
    })
}
