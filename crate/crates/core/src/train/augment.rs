use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::data::BinaryMask;

/// Which augmentations run and their ranges. Each enabled one is applied
/// with probability `probability`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub blur: bool,
    pub max_blur_sigma: f64,
    pub crop: bool,
    pub min_crop_scale: f64,
    pub rotate: bool,
    pub max_rotation_deg: f64,
    pub hflip: bool,
    pub probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            blur: true,
            max_blur_sigma: 1.5,
            crop: true,
            min_crop_scale: 0.75,
            rotate: true,
            max_rotation_deg: 10.0,
            hflip: true,
            probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            blur: false,
            crop: false,
            rotate: false,
            hflip: false,
            ..Self::default()
        }
    }

    pub fn is_none(&self) -> bool {
        !(self.blur || self.crop || self.rotate || self.hflip) || self.probability <= 0.0
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Blur standard deviation in pixels, 0 for none.
    pub sigma: f64,
    /// Side of the crop window as a fraction of the frame.
    pub scale: f64,
    /// Crop window position within the free margin, each in `[0, 1]`.
    pub offset: (f64, f64),
    /// Rotation in radians about the frame centre.
    pub angle: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            sigma: 0.0,
            scale: 1.0,
            offset: (0.0, 0.0),
            angle: 0.0,
            flip: false,
        }
    }

    pub fn sample<R: Rng>(config: &AugmentConfig, rng: &mut R) -> Self {
        let mut p = AugmentParams::identity();
        let prob = config.probability.clamp(0.0, 1.0);
        let pick = |on: bool, rng: &mut R| on && rng.random_bool(prob);
        if pick(config.blur, rng) {
            p.sigma = rng.random_range(0.0..=config.max_blur_sigma);
        }
        if pick(config.crop, rng) {
            p.scale = rng.random_range(config.min_crop_scale.min(1.0)..=1.0);
            p.offset = (rng.random(), rng.random());
        }
        if pick(config.rotate, rng) {
            let a = config.max_rotation_deg.to_radians();
            p.angle = rng.random_range(-a..=a);
        }
        p.flip = pick(config.hflip, rng);
        p
    }

    fn is_geometric_identity(&self) -> bool {
        self.scale == 1.0 && self.angle == 0.0 && !self.flip
    }

    /// Source position (continuous, pixel centres at `k + 0.5`) of output
    /// pixel `(x, y)`: flip, then rotate about the centre, then map into the crop window.
    fn source(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        let (wf, hf) = (w as f64, h as f64);
        let mut u = x as f64 + 0.5;
        let v = y as f64 + 0.5;
        if self.flip {
            u = wf - u;
        }
        let (cx, cy) = (wf / 2.0, hf / 2.0);
        let (s, c) = self.angle.sin_cos();
        let (du, dv) = (u - cx, v - cy);
        let (ru, rv) = (c * du - s * dv + cx, s * du + c * dv + cy);
        let ox = self.offset.0 * (1.0 - self.scale) * wf;
        let oy = self.offset.1 * (1.0 - self.scale) * hf;
        (ox + ru * self.scale, oy + rv * self.scale)
    }
}

pub fn hflip_rgb(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

pub fn hflip_mask(mask: &BinaryMask) -> BinaryMask {
    mask.mirrored()
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 1e-3 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (k, &kw) in kernel.iter().enumerate() {
                    let o = k as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x + o).clamp(0, w - 1), y)
                    } else {
                        (x, (y + o).clamp(0, h - 1))
                    };
                    let p = src[(sy * w + sx) as usize];
                    for ch in 0..3 {
                        acc[ch] += kw * p[ch];
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let src: Vec<[f64; 3]> = img.pixels().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect();
    let out = pass(&pass(&src, true), false);
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let p = out[y as usize * w as usize + x as usize];
        Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

fn warp_rgb(img: &RgbImage, p: &AugmentParams) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let at = |x: isize, y: isize| {
        let px = img.get_pixel(x.clamp(0, w as isize - 1) as u32, y.clamp(0, h as isize - 1) as u32);
        [px[0] as f64, px[1] as f64, px[2] as f64]
    };
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (sx, sy) = p.source(x as usize, y as usize, w, h);
        let (fx, fy) = (sx - 0.5, sy - 0.5);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let mut out = [0u8; 3];
        let (a, b, c, d) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
        for ch in 0..3 {
            let top = a[ch] * (1.0 - tx) + b[ch] * tx;
            let bottom = c[ch] * (1.0 - tx) + d[ch] * tx;
            out[ch] = (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Nearest-neighbour warp; samples from outside the frame are background.
fn warp_mask(mask: &BinaryMask, p: &AugmentParams) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let (sx, sy) = p.source(x, y, w, h);
        mask.get_signed(sx.floor() as isize, sy.floor() as isize)
    })
}

/// Applies `params` to a sample: blur on the frame and flow image, the same
/// geometric warp on all four images.
pub fn apply_augmentation(sample: &Sample, params: &AugmentParams) -> Sample {
    let mut out = sample.clone();
    if params.sigma > 0.0 {
        out.frame = gaussian_blur(&out.frame, params.sigma);
        out.flow_image = gaussian_blur(&out.flow_image, params.sigma);
    }
    if !params.is_geometric_identity() {
        out.frame = warp_rgb(&out.frame, params);
        out.flow_image = warp_rgb(&out.flow_image, params);
        out.guide = warp_mask(&out.guide, params);
        out.gt = warp_mask(&out.gt, params);
    }
    out
}

/// A random draw of [`AugmentParams`] applied to `sample`.
pub fn augment(sample: &Sample, config: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    if config.is_none() {
        return sample.clone();
    }
    apply_augmentation(sample, &AugmentParams::sample(config, rng))
}
