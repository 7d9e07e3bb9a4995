//! The guided segmentation network and its two non-guided ablations.
//!
//! ```text
//! frame ─ appearance ─ 1×1 ─┐
//!                           ⊙ ─ R ─┬─ R⊙s ───── fg branch ─┐
//! flow ── motion ───── 1×1 ─┘      └─ R⊙(1−s) ─ bg branch ─┴─ concat ─ decoder ─ ×8 ─ logits
//! ```
//!
//! `s` is the guide mask average-pooled onto the stride-8 grid and kept
//! soft. [`VariantKind::Ng1`] sends `R` straight to the decoder and
//! [`VariantKind::Ng2`] hands `R` to both branches.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{colorize_flow, BinaryMask, FlowNormalization, SequenceRecord};
use crate::encoders::{encode, image_batch, init_encoder, mask_batch, EncoderConfig, APPEARANCE, ENCODER_STRIDE, MOTION};
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::tensor::{avg_pool, bilinear_upsample, concat_channels, conv2d, crop, split_by_gate, ConvSpec, NormMode, Tensor};
use crate::train::kaiming_values;

pub const COMBINE_APPEARANCE: &str = "combine.appearance";
pub const COMBINE_MOTION: &str = "combine.motion";
pub const FG_BRANCH: &str = "fg";
pub const BG_BRANCH: &str = "bg";
pub const DECODER: &str = "decoder";

/// Layers of a branch or the decoder that carry batch norm and ReLU; the
/// last layer of each stack is a plain biased convolution.
const NORMED_LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    #[default]
    Guided,
    /// No foreground/background encoding: the decoder reads `R`.
    Ng1,
    /// All-foreground dummy guide.
    Ng2,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::Guided, VariantKind::Ng1, VariantKind::Ng2];

    pub fn uses_guide(self) -> bool {
        self == VariantKind::Guided
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantKind::Guided => "guided",
            VariantKind::Ng1 => "ng1",
            VariantKind::Ng2 => "ng2",
        })
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "guided" => Ok(VariantKind::Guided),
            "ng1" => Ok(VariantKind::Ng1),
            "ng2" => Ok(VariantKind::Ng2),
            other => Err(Error::Config(format!("unknown variant {other:?} (guided, ng1, ng2)"))),
        }
    }
}

/// How NG2 treats its all-foreground guide.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ng2Mode {
    /// Both branches receive `R`.
    #[default]
    Shared,
    /// The split formula with `s ≡ 1`: foreground gets `R`, background gets zeros.
    Literal,
}

impl FromStr for Ng2Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shared" => Ok(Ng2Mode::Shared),
            "literal" => Ok(Ng2Mode::Literal),
            other => Err(Error::Config(format!("unknown ng2 mode {other:?} (shared, literal)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    /// Channels of the fused map `R`.
    pub combine_channels: usize,
    pub combine_bias: bool,
    pub branch_depths: Vec<usize>,
    pub decoder_depths: Vec<usize>,
    pub dilations: Vec<usize>,
    pub variant: VariantKind,
    pub ng2_mode: Ng2Mode,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::desk()
    }
}

impl NetConfig {
    /// Full widths divided by `divisor`: features 512, branches
    /// (256, 256, 256, 128), decoder (128, 64, 64, 1).
    pub fn scaled(divisor: usize) -> Self {
        let d = divisor.max(1);
        let w = |c: usize| (c / d).max(1);
        NetConfig {
            encoder: EncoderConfig::with_out_channels(w(512)),
            combine_channels: w(512),
            combine_bias: true,
            branch_depths: vec![w(256), w(256), w(256), w(128)],
            decoder_depths: vec![w(128), w(64), w(64), 1],
            dilations: vec![1, 2, 4, 8],
            variant: VariantKind::Guided,
            ng2_mode: Ng2Mode::Shared,
        }
    }

    pub fn full() -> Self {
        NetConfig::scaled(1)
    }

    /// Widths divided by 16.
    pub fn desk() -> Self {
        NetConfig::scaled(16)
    }

    pub fn with_variant(mut self, variant: VariantKind) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let n = self.dilations.len();
        if n != NORMED_LAYERS + 1 || self.branch_depths.len() != n || self.decoder_depths.len() != n {
            return Err(Error::Config(format!(
                "branches, decoder and dilations need {} entries each",
                NORMED_LAYERS + 1
            )));
        }
        if self.decoder_depths[n - 1] != 1 {
            return Err(Error::Config("the last decoder layer must have depth 1".into()));
        }
        if [&self.branch_depths, &self.decoder_depths, &self.dilations]
            .iter()
            .any(|v| v.contains(&0))
            || self.combine_channels == 0
        {
            return Err(Error::Config("depths and dilations must be positive".into()));
        }
        Ok(())
    }

    pub fn decoder_input_channels(&self) -> usize {
        match self.variant {
            VariantKind::Ng1 => self.combine_channels,
            _ => 2 * self.branch_depths[NORMED_LAYERS],
        }
    }

    fn combine_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.encoder.out_channels, self.combine_channels).with_bias(self.combine_bias)
    }

    fn stack_specs(&self, c_in: usize, depths: &[usize]) -> Vec<ConvSpec> {
        let mut c = c_in;
        depths
            .iter()
            .zip(&self.dilations)
            .enumerate()
            .map(|(i, (&d, &dil))| {
                let spec = ConvSpec::same3x3(c, d, dil).with_bias(i >= NORMED_LAYERS);
                c = d;
                spec
            })
            .collect()
    }

    /// Prefixes and layer specs of every stack this variant uses.
    fn stacks(&self) -> Vec<(&'static str, Vec<ConvSpec>)> {
        let mut out = Vec::new();
        if self.variant != VariantKind::Ng1 {
            for branch in [FG_BRANCH, BG_BRANCH] {
                out.push((branch, self.stack_specs(self.combine_channels, &self.branch_depths)));
            }
        }
        out.push((DECODER, self.stack_specs(self.decoder_input_channels(), &self.decoder_depths)));
        out
    }
}

fn init_conv(store: &mut ParamStore, name: &str, spec: &ConvSpec, rng: &mut impl Rng) -> Result<()> {
    let shape = spec.weight_shape();
    store.insert(
        format!("{name}.weight"),
        &shape,
        kaiming_values(shape.iter().product(), spec.fan_in(), rng)?,
    )?;
    if spec.has_bias {
        store.insert(format!("{name}.bias"), &[spec.out_channels], vec![0.0; spec.out_channels])?;
    }
    Ok(())
}

/// Fresh parameters for the combination, branches and decoder.
pub fn init_head(store: &mut ParamStore, config: &NetConfig, rng: &mut impl Rng) -> Result<()> {
    config.validate()?;
    let spec = config.combine_spec();
    init_conv(store, COMBINE_APPEARANCE, &spec, rng)?;
    init_conv(store, COMBINE_MOTION, &spec, rng)?;
    for (prefix, specs) in config.stacks() {
        for (i, spec) in specs.iter().enumerate() {
            let name = format!("{prefix}.{i}");
            init_conv(store, &name, spec, rng)?;
            if i < NORMED_LAYERS {
                store.insert_norm(&format!("{name}.bn"), spec.out_channels);
            }
        }
    }
    Ok(())
}

/// Encoders plus head, all Kaiming-initialized.
pub fn init_params(config: &NetConfig, rng: &mut impl Rng) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    init_encoder(&mut store, APPEARANCE, &config.encoder, rng)?;
    init_encoder(&mut store, MOTION, &config.encoder, rng)?;
    init_head(&mut store, config, rng)?;
    Ok(store)
}

/// Names of the parameters the stage after the encoders trains.
pub const HEAD_PREFIXES: [&str; 4] = ["combine.", "fg.", "bg.", "decoder."];
pub const ENCODER_PREFIXES: [&str; 2] = ["appearance.", "motion."];

fn pointwise(session: &mut Session, name: &str, spec: &ConvSpec, x: &Tensor) -> Result<Tensor> {
    let weight = session.param(&format!("{name}.weight"))?;
    let bias = if spec.has_bias {
        Some(session.param(&format!("{name}.bias"))?)
    } else {
        None
    };
    conv2d(x, spec, &weight, bias.as_ref())
}

/// `R = conv1×1(A) ⊙ conv1×1(M)`.
pub fn combine(session: &mut Session, config: &NetConfig, a: &Tensor, m: &Tensor) -> Result<Tensor> {
    if a.shape() != m.shape() {
        return Err(Error::shape(
            "combine",
            format!("appearance {:?} vs motion {:?}", a.shape(), m.shape()),
        ));
    }
    let spec = config.combine_spec();
    let ca = pointwise(session, COMBINE_APPEARANCE, &spec, a)?;
    let cm = pointwise(session, COMBINE_MOTION, &spec, m)?;
    ca.mul(&cm)
}

/// The guide averaged over 8×8 blocks: a soft `[N, 1, h, w]` map in `[0, 1]`.
pub fn pooled_guide(guide: &Tensor) -> Result<Tensor> {
    avg_pool(guide, ENCODER_STRIDE)
}

/// Splits `R` into `R ⊙ s` and `R ⊙ (1 − s)` where `s` is the pooled guide.
/// The two parts add up to `R` exactly.
pub fn split_fg_bg(r: &Tensor, guide: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = pooled_guide(guide)?;
    let (rs, ss) = (r.shape(), s.shape());
    if rs.len() != 4 || ss.len() != 4 || rs[0] != ss[0] || rs[2..] != ss[2..] {
        return Err(Error::shape(
            "split_fg_bg",
            format!("pooled guide {ss:?} does not cover feature map {rs:?}"),
        ));
    }
    split_by_gate(r, &s)
}

fn run_stack(session: &mut Session, prefix: &str, specs: &[ConvSpec], x: &Tensor, mode: NormMode) -> Result<Tensor> {
    let mut x = x.clone();
    for (i, spec) in specs.iter().enumerate() {
        let name = format!("{prefix}.{i}");
        let weight = session.param(&format!("{name}.weight"))?;
        if i < NORMED_LAYERS {
            x = conv2d(&x, spec, &weight, None)?;
            x = session.bn_relu(&format!("{name}.bn"), &x, mode)?;
        } else {
            let bias = session.param(&format!("{name}.bias"))?;
            x = conv2d(&x, spec, &weight, Some(&bias))?;
        }
    }
    Ok(x)
}

/// Foreground and background stacks, outputs concatenated as (fg, bg).
pub fn encode_branches(
    session: &mut Session,
    config: &NetConfig,
    f: &Tensor,
    b: &Tensor,
    mode: NormMode,
) -> Result<Tensor> {
    if f.shape() != b.shape() {
        return Err(Error::shape(
            "encode_branches",
            format!("foreground {:?} vs background {:?}", f.shape(), b.shape()),
        ));
    }
    let specs = config.stack_specs(config.combine_channels, &config.branch_depths);
    let fo = run_stack(session, FG_BRANCH, &specs, f, mode)?;
    let bo = run_stack(session, BG_BRANCH, &specs, b, mode)?;
    concat_channels(&[&fo, &bo])
}

/// Bilinear ×8 then crop to `height × width`.
pub fn upsample_logits(logits: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    crop(&bilinear_upsample(logits, ENCODER_STRIDE)?, height, width)
}

/// Decoder stack on the stride-8 grid, then full-resolution logits `[N, 1, H, W]`.
pub fn decode(
    session: &mut Session,
    config: &NetConfig,
    encoded: &Tensor,
    mode: NormMode,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let specs = config.stack_specs(config.decoder_input_channels(), &config.decoder_depths);
    let small = run_stack(session, DECODER, &specs, encoded, mode)?;
    upsample_logits(&small, height, width)
}

/// Foreground where `sigmoid(logit) ≥ 0.5`.
pub fn logits_to_mask(logits: &[f64], width: usize, height: usize) -> Result<BinaryMask> {
    let bits = logits.iter().map(|&z| crate::tensor::sigmoid(z) >= 0.5).collect();
    BinaryMask::new(width, height, bits)
}

/// Everything after the encoders. `guide` is the full-resolution guide
/// batch, needed by [`VariantKind::Guided`] only.
pub fn forward_features(
    session: &mut Session,
    config: &NetConfig,
    a: &Tensor,
    m: &Tensor,
    guide: Option<&Tensor>,
    mode: NormMode,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let r = combine(session, config, a, m)?;
    let encoded = match config.variant {
        VariantKind::Guided => {
            let guide = guide.ok_or_else(|| Error::Data("the guided variant needs a guide mask".into()))?;
            let (f, b) = split_fg_bg(&r, guide)?;
            encode_branches(session, config, &f, &b, mode)?
        }
        VariantKind::Ng1 => r,
        VariantKind::Ng2 => match config.ng2_mode {
            Ng2Mode::Shared => encode_branches(session, config, &r, &r, mode)?,
            Ng2Mode::Literal => {
                let [n, _, h, w] = r.dims4("forward")?;
                let (f, b) = split_by_gate(&r, &Tensor::ones(&[n, 1, h, w]))?;
                encode_branches(session, config, &f, &b, mode)?
            }
        },
    };
    decode(session, config, &encoded, mode, height, width)
}

/// The guided path with explicit stride-8 gates: `F = R ⊙ fg_gate`,
/// `B = R ⊙ bg_gate`.
pub fn forward_with_gates(
    session: &mut Session,
    config: &NetConfig,
    a: &Tensor,
    m: &Tensor,
    fg_gate: &Tensor,
    bg_gate: &Tensor,
    mode: NormMode,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let r = combine(session, config, a, m)?;
    let f = r.mul(fg_gate)?;
    let b = r.mul(bg_gate)?;
    let encoded = encode_branches(session, config, &f, &b, mode)?;
    decode(session, config, &encoded, mode, height, width)
}

/// Both encoders on `[N, 3, H, W]` batches.
pub fn encode_streams(
    session: &mut Session,
    config: &NetConfig,
    frames: &Tensor,
    flow_images: &Tensor,
    mode: NormMode,
) -> Result<(Tensor, Tensor)> {
    let a = encode(session, APPEARANCE, &config.encoder, frames, mode)?;
    let m = encode(session, MOTION, &config.encoder, flow_images, mode)?;
    Ok((a, m))
}

/// Full forward pass to logits. Encoders run in `encoder_mode`, everything
/// else in `mode`.
pub fn forward(
    session: &mut Session,
    config: &NetConfig,
    frames: &Tensor,
    flow_images: &Tensor,
    guide: Option<&Tensor>,
    encoder_mode: NormMode,
    mode: NormMode,
) -> Result<Tensor> {
    let [_, _, h, w] = frames.dims4("forward")?;
    if flow_images.shape() != frames.shape() {
        return Err(Error::shape(
            "forward",
            format!("flow images {:?} vs frames {:?}", flow_images.shape(), frames.shape()),
        ));
    }
    if let Some(g) = guide {
        if g.shape() != [frames.shape()[0], 1, h, w] {
            return Err(Error::shape("forward", format!("guide {:?} vs frames {:?}", g.shape(), frames.shape())));
        }
    }
    let (a, m) = encode_streams(session, config, frames, flow_images, encoder_mode)?;
    forward_features(session, config, &a, &m, guide, mode, h, w)
}

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: NetConfig, params: ParamStore) -> Self {
        Model { config, params }
    }

    /// Eval-mode logits and masks for a batch of frames.
    pub fn predict_batch(
        &self,
        frames: &[&RgbImage],
        flow_images: &[&RgbImage],
        guides: Option<&[&BinaryMask]>,
    ) -> Result<(Tensor, Vec<BinaryMask>)> {
        let x = image_batch(frames)?;
        let o = image_batch(flow_images)?;
        let g = match (self.config.variant.uses_guide(), guides) {
            (true, Some(g)) => Some(mask_batch(g)?),
            (true, None) => return Err(Error::Data("the guided variant needs guide masks".into())),
            (false, _) => None,
        };
        let mut s = Session::new(&self.params).frozen_all();
        let logits = forward(&mut s, &self.config, &x, &o, g.as_ref(), NormMode::Eval, NormMode::Eval)?;
        let [n, _, h, w] = logits.dims4("predict")?;
        let masks = logits
            .data()
            .chunks(h * w)
            .take(n)
            .map(|c| logits_to_mask(c, w, h))
            .collect::<Result<_>>()?;
        Ok((logits, masks))
    }

    pub fn predict(&self, frame: &RgbImage, flow_image: &RgbImage, guide: Option<&BinaryMask>) -> Result<BinaryMask> {
        let guides = guide.map(|g| [g]);
        let (_, mut masks) = self.predict_batch(&[frame], &[flow_image], guides.as_ref().map(|g| g.as_slice()))?;
        Ok(masks.pop().unwrap())
    }

    /// One mask per frame. `guide` names the guide algorithm; it may be
    /// `None` for the variants that ignore guides.
    pub fn predict_sequence(
        &self,
        record: &SequenceRecord,
        guide: Option<&str>,
        normalization: FlowNormalization,
    ) -> Result<Vec<BinaryMask>> {
        let guides = if self.config.variant.uses_guide() {
            let alg = guide.ok_or_else(|| Error::Data(format!("{}: no guide algorithm given", record.name)))?;
            Some(record.guide(alg).ok_or_else(|| {
                Error::Data(format!("{}: no guide masks in guide/{alg}", record.name))
            })?)
        } else {
            None
        };
        (0..record.len())
            .map(|t| {
                let flow_image = colorize_flow(&record.flow_for_frame(t), normalization);
                self.predict(&record.frames[t], &flow_image, guides.map(|g| &g[t]))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn model(variant: VariantKind) -> (NetConfig, ParamStore) {
        let config = NetConfig::desk().with_variant(variant);
        let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        (config, params)
    }

    #[test]
    fn desk_widths_keep_the_full_ratios() {
        let c = NetConfig::desk();
        assert_eq!(c.encoder.out_channels, 32);
        assert_eq!(c.branch_depths, [16, 16, 16, 8]);
        assert_eq!(c.decoder_depths, [8, 4, 4, 1]);
        assert_eq!(NetConfig::full().branch_depths, [256, 256, 256, 128]);
        assert_eq!(NetConfig::full().decoder_depths, [128, 64, 64, 1]);
        assert_eq!(c.decoder_input_channels(), 16);
        assert_eq!(c.clone().with_variant(VariantKind::Ng1).decoder_input_channels(), 32);
    }

    #[test]
    fn variant_parameter_inventory() {
        let (_, guided) = model(VariantKind::Guided);
        let (_, ng1) = model(VariantKind::Ng1);
        assert!(guided.contains("fg.3.bias") && guided.contains("bg.0.bn.gamma"));
        assert!(!ng1.names().any(|n| n.starts_with("fg.") || n.starts_with("bg.")));
        assert_eq!(ng1.get("decoder.0.weight").unwrap().shape, [8, 32, 3, 3]);
        assert_eq!(guided.get("decoder.0.weight").unwrap().shape, [8, 16, 3, 3]);
        assert!(!guided.contains("decoder.3.bn.gamma") && guided.contains("decoder.3.bias"));
    }

    #[test]
    fn combine_with_identity_convs_is_the_product() {
        let mut config = NetConfig::desk();
        config.encoder.out_channels = 2;
        config.combine_channels = 2;
        let mut p = ParamStore::new();
        for name in [COMBINE_APPEARANCE, COMBINE_MOTION] {
            p.insert(format!("{name}.weight"), &[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
            p.insert(format!("{name}.bias"), &[2], vec![0.0; 2]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random(&[1, 2, 3, 3], &mut rng);
        let m = random(&[1, 2, 3, 3], &mut rng);
        let r = combine(&mut Session::new(&p), &config, &a, &m).unwrap();
        let expect: Vec<f64> = a.data().iter().zip(m.data()).map(|(x, y)| x * y).collect();
        assert_eq!(r.data(), expect.as_slice());

        p.get_mut("combine.appearance.weight").unwrap().data.fill(0.0);
        let r = combine(&mut Session::new(&p), &config, &a, &m).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random(&[1, 4, 2, 3], &mut rng);
        let (f, b) = split_fg_bg(&r, &Tensor::zeros(&[1, 1, 16, 24])).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
        assert_eq!(b.data(), r.data());
        let (f, b) = split_fg_bg(&r, &Tensor::ones(&[1, 1, 16, 24])).unwrap();
        assert_eq!(f.data(), r.data());
        assert!(b.data().iter().all(|&v| v == 0.0));
        assert!(split_fg_bg(&r, &Tensor::ones(&[1, 1, 16, 16])).is_err());
    }

    #[test]
    fn branch_output_is_fg_then_bg() {
        let (config, mut p) = model(VariantKind::Guided);
        // tie the branches
        let fg: Vec<(String, Vec<f64>)> = p
            .iter()
            .filter(|(n, _)| n.starts_with("fg."))
            .map(|(n, e)| (n.replacen("fg.", "bg.", 1), e.data.clone()))
            .collect();
        for (name, data) in fg {
            p.get_mut(&name).unwrap().data = data;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random(&[1, 32, 3, 3], &mut rng);
        let b = random(&[1, 32, 3, 3], &mut rng);
        let fb = encode_branches(&mut Session::new(&p), &config, &f, &b, NormMode::Eval).unwrap();
        let bf = encode_branches(&mut Session::new(&p), &config, &b, &f, NormMode::Eval).unwrap();
        assert_eq!(fb.shape(), [1, 16, 3, 3]);
        let half = 8 * 9;
        assert_eq!(&fb.data()[..half], &bf.data()[half..]);
        assert_eq!(&fb.data()[half..], &bf.data()[..half]);
    }

    #[test]
    fn decoding_thresholds() {
        let m = logits_to_mask(&[0.0, -1e-9, 10.0, -10.0], 2, 2).unwrap();
        assert_eq!(m.bits(), [true, false, true, false]);
    }

    #[test]
    fn output_matches_odd_frame_sizes() {
        let (config, p) = model(VariantKind::Guided);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 3, 30, 45], &mut rng);
        let o = random(&[1, 3, 30, 45], &mut rng);
        let g = Tensor::ones(&[1, 1, 30, 45]);
        let mut s = Session::new(&p).frozen_all();
        let logits = forward(&mut s, &config, &x, &o, Some(&g), NormMode::Eval, NormMode::Eval).unwrap();
        assert_eq!(logits.shape(), [1, 1, 30, 45]);
    }

    #[test]
    fn guided_needs_a_guide_and_ng2_ignores_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 3, 16, 16], &mut rng);
        let o = random(&[1, 3, 16, 16], &mut rng);
        let (config, p) = model(VariantKind::Guided);
        assert!(forward(&mut Session::new(&p), &config, &x, &o, None, NormMode::Eval, NormMode::Eval).is_err());
        let (config, p) = model(VariantKind::Ng2);
        let g0 = Tensor::zeros(&[1, 1, 16, 16]);
        let a = forward(&mut Session::new(&p), &config, &x, &o, Some(&g0), NormMode::Eval, NormMode::Eval).unwrap();
        let b = forward(&mut Session::new(&p), &config, &x, &o, None, NormMode::Eval, NormMode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn parse_variants() {
        for v in VariantKind::ALL {
            assert_eq!(v.to_string().parse::<VariantKind>().unwrap(), v);
        }
        assert!("ng3".parse::<VariantKind>().is_err());
        assert_eq!("literal".parse::<Ng2Mode>().unwrap(), Ng2Mode::Literal);
    }
}
