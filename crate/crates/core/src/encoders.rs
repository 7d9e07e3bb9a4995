//! Appearance and motion encoders.
//!
//! Both streams share one architecture: three stages, each opening with a
//! stride-2 3×3 convolution, every convolution followed by batch norm and
//! ReLU. The output is a post-ReLU feature map with `out_channels` channels
//! on the stride-8 grid, `ceil(H/8) × ceil(W/8)`.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BinaryMask;
use crate::error::{Error, Result};
use crate::net::upsample_logits;
use crate::params::{ParamStore, Session};
use crate::tensor::{bce_with_logits, conv2d, ConvSpec, NormMode, Tensor};
use crate::train::{kaiming_values, LrPolicy, Sgd, SgdConfig};

pub const APPEARANCE: &str = "appearance";
pub const MOTION: &str = "motion";

/// Total downsampling factor of an encoder.
pub const ENCODER_STRIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub out_channels: usize,
    /// Convolutions per stage; the first of each stage has stride 2.
    pub stage_depths: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_channels: 3,
            out_channels: 32,
            stage_depths: vec![1, 1, 1],
        }
    }
}

impl EncoderConfig {
    pub fn with_out_channels(out_channels: usize) -> Self {
        EncoderConfig {
            out_channels,
            ..Self::default()
        }
    }

    /// Stage widths `out/4, out/2, out`.
    pub fn widths(&self) -> [usize; 3] {
        let c = self.out_channels;
        [(c / 4).max(1), (c / 2).max(1), c]
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.len() != 3 || self.stage_depths.contains(&0) {
            return Err(Error::Config(format!(
                "encoder needs three stages of depth at least 1, got {:?}",
                self.stage_depths
            )));
        }
        if self.out_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config("encoder channel counts must be positive".into()));
        }
        Ok(())
    }

    /// `(name, spec)` of every convolution, in order.
    fn layers(&self, prefix: &str) -> Vec<(String, ConvSpec)> {
        let mut out = Vec::new();
        let mut c_in = self.input_channels;
        for (s, (&depth, &width)) in self.stage_depths.iter().zip(&self.widths()).enumerate() {
            for l in 0..depth {
                let spec = ConvSpec::same3x3(c_in, width, 1)
                    .with_stride(if l == 0 { 2 } else { 1 })
                    .with_bias(false);
                out.push((format!("{prefix}.s{s}.{l}"), spec));
                c_in = width;
            }
        }
        out
    }
}

/// Adds Kaiming-initialized encoder parameters under `prefix`.
pub fn init_encoder(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, rng: &mut impl Rng) -> Result<()> {
    config.validate()?;
    for (name, spec) in config.layers(prefix) {
        let shape = spec.weight_shape();
        store.insert(
            format!("{name}.weight"),
            &shape,
            kaiming_values(shape.iter().product(), spec.fan_in(), rng)?,
        )?;
        store.insert_norm(&format!("{name}.bn"), spec.out_channels);
    }
    Ok(())
}

/// Feature map of a `[N, 3, H, W]` batch.
pub fn encode(
    session: &mut Session,
    prefix: &str,
    config: &EncoderConfig,
    input: &Tensor,
    mode: NormMode,
) -> Result<Tensor> {
    let [_, c, h, w] = input.dims4("encode")?;
    if h < ENCODER_STRIDE || w < ENCODER_STRIDE {
        return Err(Error::shape(
            "encode",
            format!("input {w}x{h} is smaller than {ENCODER_STRIDE}x{ENCODER_STRIDE}"),
        ));
    }
    if c != config.input_channels {
        return Err(Error::shape(
            "encode",
            format!("input channels: expected {}, got {c}", config.input_channels),
        ));
    }
    let mut x = input.clone();
    for (name, spec) in config.layers(prefix) {
        let weight = session.param(&format!("{name}.weight"))?;
        x = conv2d(&x, &spec, &weight, None)?;
        x = session.bn_relu(&format!("{name}.bn"), &x, mode)?;
    }
    Ok(x)
}

/// Pixel values mapped to `[-1, 1]`, batched as `[N, 3, H, W]`.
pub fn image_batch(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("image_batch", "no images"))?;
    let (w, h) = first.dimensions();
    let (w, h) = (w as usize, h as usize);
    let plane = w * h;
    let mut data = vec![0.0; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != first.dimensions() {
            return Err(Error::shape(
                "image_batch",
                format!("image {n} is {:?}, expected {w}x{h}", img.dimensions()),
            ));
        }
        for (i, px) in img.pixels().enumerate() {
            for ch in 0..3 {
                data[(n * 3 + ch) * plane + i] = px[ch] as f64 / 127.5 - 1.0;
            }
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Masks as a `[N, 1, H, W]` batch of 0/1 values.
pub fn mask_batch(masks: &[&BinaryMask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::invalid("mask_batch", "no masks"))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(masks.len() * w * h);
    for (n, m) in masks.iter().enumerate() {
        if m.dims() != (w, h) {
            return Err(Error::shape(
                "mask_batch",
                format!("mask {n} is {}x{}, expected {w}x{h}", m.width(), m.height()),
            ));
        }
        data.extend(m.bits().iter().map(|&b| b as u8 as f64));
    }
    Tensor::new(&[masks.len(), 1, h, w], data)
}

fn encode_one(store: &ParamStore, prefix: &str, config: &EncoderConfig, image: &RgbImage) -> Result<Tensor> {
    let mut s = Session::new(store).frozen_all();
    encode(&mut s, prefix, config, &image_batch(&[image])?, NormMode::Eval)
}

/// Appearance features of one frame, `[1, C, ceil(H/8), ceil(W/8)]`.
pub fn appearance_encode(frame: &RgbImage, store: &ParamStore, config: &EncoderConfig) -> Result<Tensor> {
    encode_one(store, APPEARANCE, config, frame)
}

/// Motion features of one colour-coded flow image.
pub fn motion_encode(flow_image: &RgbImage, store: &ParamStore, config: &EncoderConfig) -> Result<Tensor> {
    encode_one(store, MOTION, config, flow_image)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub sgd: SgdConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 8,
            batch_size: 8,
            base_lr: 0.05,
            seed: 0,
            sgd: SgdConfig::default(),
        }
    }
}

pub struct Pretrained {
    /// Encoder entries only; the prediction head is dropped.
    pub params: ParamStore,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// The discarded prediction head, kept for inspection.
    pub head: ParamStore,
}

fn head_name(prefix: &str) -> String {
    format!("{prefix}_head")
}

fn head_logits(
    session: &mut Session,
    prefix: &str,
    config: &EncoderConfig,
    input: &Tensor,
    mode: NormMode,
) -> Result<Tensor> {
    let [_, _, h, w] = input.dims4("head_logits")?;
    let features = encode(session, prefix, config, input, mode)?;
    let head = head_name(prefix);
    let weight = session.param(&format!("{head}.weight"))?;
    let bias = session.param(&format!("{head}.bias"))?;
    let logits = conv2d(&features, &ConvSpec::pointwise(config.out_channels, 1).with_bias(true), &weight, Some(&bias))?;
    upsample_logits(&logits, h, w)
}

/// Trains a fresh encoder under `prefix` with a throwaway 1×1 head to
/// predict `mask` from `image` with per-pixel cross-entropy.
pub fn pretrain_encoder(
    prefix: &str,
    config: &EncoderConfig,
    samples: &[(RgbImage, BinaryMask)],
    train: &PretrainConfig,
) -> Result<Pretrained> {
    if samples.is_empty() {
        return Err(Error::Data(format!("{prefix} pretraining: empty dataset")));
    }
    if train.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut store = ParamStore::new();
    init_encoder(&mut store, prefix, config, &mut rng)?;
    let head = head_name(prefix);
    store.insert(
        format!("{head}.weight"),
        &[1, config.out_channels, 1, 1],
        kaiming_values(config.out_channels, config.out_channels, &mut rng)?,
    )?;
    store.insert(format!("{head}.bias"), &[1], vec![0.0])?;

    let inputs = samples
        .iter()
        .map(|(img, _)| image_batch(&[img]))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = samples.iter().map(|(_, m)| m.to_f64()).collect();

    let mut sgd = Sgd::new(train.sgd);
    let batches_per_epoch = samples.len().div_ceil(train.batch_size);
    let max_iter = batches_per_epoch * train.epochs;
    let policy = LrPolicy::Poly { power: 0.9 };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(train.epochs);
    let mut iter = 0;
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(train.batch_size) {
            let x = Tensor::stack(&batch.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
            let y: Vec<f64> = batch.iter().flat_map(|&i| targets[i].iter().copied()).collect();
            let mut s = Session::new(&store);
            let logits = head_logits(&mut s, prefix, config, &x, NormMode::Train)?;
            let loss = bce_with_logits(&logits, &y)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "{prefix} pretraining: non-finite loss at epoch {epoch}, iteration {iter}"
                )));
            }
            total += value * batch.len() as f64;
            loss.backward()?;
            let grads = s.grads();
            s.into_stats().apply(&mut store)?;
            let lr = policy.rate(train.base_lr, epoch, iter, max_iter)?;
            sgd.step(&mut store, &grads, lr)?;
            iter += 1;
        }
        losses.push(total / samples.len() as f64);
    }
    let head_params = store.subset(&head);
    store.remove_prefix(&head);
    Ok(Pretrained {
        params: store,
        losses,
        head: head_params,
    })
}

pub fn pretrain_motion(
    config: &EncoderConfig,
    samples: &[(RgbImage, BinaryMask)],
    train: &PretrainConfig,
) -> Result<Pretrained> {
    pretrain_encoder(MOTION, config, samples, train)
}

pub fn pretrain_appearance(
    config: &EncoderConfig,
    samples: &[(RgbImage, BinaryMask)],
    train: &PretrainConfig,
) -> Result<Pretrained> {
    pretrain_encoder(APPEARANCE, config, samples, train)
}

/// Mask predicted by a pretrained encoder together with its head.
pub fn head_predict(
    prefix: &str,
    config: &EncoderConfig,
    pretrained: &Pretrained,
    image: &RgbImage,
) -> Result<BinaryMask> {
    let mut store = pretrained.params.clone();
    store.merge(&pretrained.head);
    let mut s = Session::new(&store).frozen_all();
    let logits = head_logits(&mut s, prefix, config, &image_batch(&[image])?, NormMode::Eval)?;
    let (w, h) = image.dimensions();
    crate::net::logits_to_mask(logits.data(), w as usize, h as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn store(config: &EncoderConfig) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        init_encoder(&mut s, APPEARANCE, config, &mut rng).unwrap();
        init_encoder(&mut s, MOTION, config, &mut rng).unwrap();
        s
    }

    fn noise_image(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    #[test]
    fn output_is_on_the_stride_8_grid() {
        for c in [8, 32] {
            let config = EncoderConfig::with_out_channels(c);
            let s = store(&config);
            let a = appearance_encode(&noise_image(64, 64, 1), &s, &config).unwrap();
            assert_eq!(a.shape(), [1, c, 8, 8]);
            let m = motion_encode(&noise_image(60, 41, 2), &s, &config).unwrap();
            assert_eq!(m.shape(), [1, c, 6, 8]);
        }
    }

    #[test]
    fn deterministic_and_finite() {
        let config = EncoderConfig::default();
        let s = store(&config);
        let img = noise_image(32, 32, 5);
        let a = appearance_encode(&img, &s, &config).unwrap();
        assert_eq!(a.data(), appearance_encode(&img, &s, &config).unwrap().data());
        let white = RgbImage::from_pixel(32, 32, Rgb([255, 255, 255]));
        let m = motion_encode(&white, &s, &config).unwrap();
        assert!(m.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn undersized_input_is_rejected() {
        let config = EncoderConfig::default();
        let s = store(&config);
        assert!(appearance_encode(&noise_image(7, 16, 0), &s, &config).is_err());
    }

    #[test]
    fn empty_pretraining_set_is_rejected() {
        assert!(pretrain_motion(&EncoderConfig::default(), &[], &PretrainConfig::default()).is_err());
    }
}
