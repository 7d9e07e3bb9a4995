//! Training: loss, learning-rate schedules, initialization, augmentation,
//! the SGD loop with validation-based model selection, and the ablation runner.

mod ablation;
mod augment;
mod optim;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationConfig, AblationReport, AblationRow};
pub use augment::{
    apply_augmentation, augment, gaussian_blur, hflip_mask, hflip_rgb, AugmentConfig, AugmentParams,
};
pub(crate) use optim::kaiming_values;
pub use optim::{kaiming_init, Sgd, SgdConfig};
pub use schedule::{poly_lr, step_lr, LrPolicy};

use crate::data::{colorize_flow, BinaryMask, FlowNormalization, SequenceRecord};
use crate::encoders::{image_batch, mask_batch};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_sequence, SequenceScores};
use crate::net::{encode_streams, forward, forward_features, Model, NetConfig, ENCODER_PREFIXES};
use crate::params::{config_hash, Checkpoint, CheckpointMeta, ParamStore, Session};
use crate::tensor::{bce_with_logits, NormMode, Tensor};

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sequence: String,
    pub frame: RgbImage,
    pub flow_image: RgbImage,
    pub guide: BinaryMask,
    pub gt: BinaryMask,
}

/// One sample per annotated frame. Without a guide algorithm the guide is
/// the all-foreground mask.
pub fn samples_from_sequence(
    record: &SequenceRecord,
    guide: Option<&str>,
    normalization: FlowNormalization,
) -> Result<Vec<Sample>> {
    let gt = record
        .gt
        .as_ref()
        .ok_or_else(|| Error::Data(format!("{}: no ground truth", record.name)))?;
    let guides = match guide {
        Some(alg) => Some(
            record
                .guide(alg)
                .ok_or_else(|| Error::Data(format!("{}: no guide masks in guide/{alg}", record.name)))?,
        ),
        None => None,
    };
    let (w, h) = record.dims();
    Ok((0..record.len())
        .map(|t| Sample {
            sequence: record.name.clone(),
            frame: record.frames[t].clone(),
            flow_image: colorize_flow(&record.flow_for_frame(t), normalization),
            guide: guides.map_or_else(|| BinaryMask::full(w, h), |g| g[t].clone()),
            gt: gt[t].clone(),
        })
        .collect())
}

/// Mean per-pixel binary cross-entropy of `[N, 1, H, W]` logits against `gt`.
pub fn cross_entropy_loss(logits: &Tensor, gt: &[&BinaryMask]) -> Result<Tensor> {
    let [n, c, h, w] = logits.dims4("cross_entropy_loss")?;
    if c != 1 || n != gt.len() || gt.iter().any(|m| m.dims() != (w, h)) {
        return Err(Error::shape(
            "cross_entropy_loss",
            format!("logits {:?} vs {} masks", logits.shape(), gt.len()),
        ));
    }
    let target: Vec<f64> = gt.iter().flat_map(|m| m.to_f64()).collect();
    bce_with_logits(logits, &target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_policy: LrPolicy,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub sgd: SgdConfig,
    /// Keep the appearance and motion encoders fixed (eval-mode batch norm, no updates).
    pub freeze_encoders: bool,
    /// Stop after this many iterations in total.
    pub max_iterations: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 20,
            base_lr: 0.1,
            lr_policy: LrPolicy::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            sgd: SgdConfig::default(),
            freeze_encoders: true,
            max_iterations: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if let LrPolicy::Step { every, gamma } = self.lr_policy {
            if every == 0 || !(gamma > 0.0) {
                return Err(Error::Config("step policy needs every ≥ 1 and gamma > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used by the epoch's last iteration.
    pub lr: f64,
    pub train_loss: f64,
    pub val_j: Option<f64>,
}

pub struct TrainOutcome {
    /// Best epoch by validation `J` (the last epoch without a validation set).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub curve: Vec<EpochRecord>,
}

/// `epoch,lr,train_loss,val_J` rows.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_J\n");
    for r in curve {
        let v = r.val_j.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(out, "{},{},{:.8},{}", r.epoch, r.lr, r.train_loss, v).unwrap();
    }
    out
}

/// Checkpoint metadata describing `net` and `train`.
pub fn run_config(net: &NetConfig, train: &TrainConfig) -> serde_json::Value {
    serde_json::json!({ "net": net, "train": train })
}

/// Network configuration stored in a checkpoint written by [`train`].
pub fn checkpoint_net_config(ckpt: &Checkpoint) -> Result<NetConfig> {
    let net = ckpt
        .meta
        .config
        .get("net")
        .ok_or_else(|| Error::Checkpoint("metadata has no network configuration".into()))?;
    serde_json::from_value(net.clone()).map_err(|e| Error::Checkpoint(format!("network configuration: {e}")))
}

/// Per-sequence `J`/`F`/`T` of eval-mode predictions, sequences in first-seen order.
pub fn evaluate_model(model: &Model, samples: &[Sample], tolerance: Option<f64>) -> Result<Vec<SequenceScores>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, (Vec<BinaryMask>, Vec<BinaryMask>)> = BTreeMap::new();
    for chunk in samples.chunks(8) {
        let frames: Vec<&RgbImage> = chunk.iter().map(|s| &s.frame).collect();
        let flows: Vec<&RgbImage> = chunk.iter().map(|s| &s.flow_image).collect();
        let guides: Vec<&BinaryMask> = chunk.iter().map(|s| &s.guide).collect();
        let (_, masks) = model.predict_batch(&frames, &flows, Some(&guides))?;
        for (s, m) in chunk.iter().zip(masks) {
            let entry = groups.entry(s.sequence.as_str()).or_insert_with(|| {
                order.push(s.sequence.as_str());
                (Vec::new(), Vec::new())
            });
            entry.0.push(m);
            entry.1.push(s.gt.clone());
        }
    }
    order
        .iter()
        .map(|name| {
            let (pred, gt) = &groups[name];
            evaluate_sequence(name, pred, gt, tolerance)
        })
        .collect()
}

pub fn mean_j(scores: &[SequenceScores]) -> f64 {
    scores.iter().map(|s| s.j_mean).sum::<f64>() / scores.len().max(1) as f64
}

/// Inputs of one sample prepared for the loop.
struct Prepared {
    /// Encoder outputs when the encoders are frozen and inputs fixed.
    features: Option<(Tensor, Tensor)>,
    frame: Tensor,
    flow: Tensor,
    guide: Tensor,
    gt: BinaryMask,
}

fn prepare(model: &Model, s: &Sample, cache_features: bool) -> Result<Prepared> {
    let frame = image_batch(&[&s.frame])?;
    let flow = image_batch(&[&s.flow_image])?;
    let guide = mask_batch(&[&s.guide])?;
    let features = if cache_features {
        let mut session = Session::new(&model.params).frozen_all();
        Some(encode_streams(&mut session, &model.config, &frame, &flow, NormMode::Eval)?)
    } else {
        None
    };
    Ok(Prepared {
        features,
        frame,
        flow,
        guide,
        gt: s.gt.clone(),
    })
}

/// Errors when a sequence appears in both splits.
pub fn check_disjoint(train_set: &[Sample], val_set: &[Sample]) -> Result<()> {
    let train_names: BTreeSet<&str> = train_set.iter().map(|s| s.sequence.as_str()).collect();
    let overlap: Vec<&str> = val_set
        .iter()
        .map(|s| s.sequence.as_str())
        .filter(|n| train_names.contains(n))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !overlap.is_empty() {
        return Err(Error::Config(format!(
            "train and validation splits overlap: {}",
            overlap.join(", ")
        )));
    }
    Ok(())
}

/// Trains `model` on `train_set`, selecting the epoch with the
/// best mean validation `J`.
///
/// The run is deterministic given `config.seed`. `resume` continues from a
/// checkpoint written by an earlier call: parameters, momentum buffers and
/// the epoch counter (and with it the learning-rate schedule) are restored.
pub fn train(
    model: &Model,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    check_disjoint(train_set, val_set)?;

    let meta_config = run_config(&model.config, config);
    let hash = config_hash(&meta_config);
    let (mut params, mut sgd, start_epoch) = match resume {
        Some(c) => (c.params.clone(), Sgd::with_state(config.sgd, c.optimizer.clone()), c.meta.epoch),
        None => (model.params.clone(), Sgd::new(config.sgd), 0),
    };
    let frozen: Vec<&str> = if config.freeze_encoders { ENCODER_PREFIXES.to_vec() } else { Vec::new() };
    let encoder_mode = if config.freeze_encoders { NormMode::Eval } else { NormMode::Train };

    let cache = config.freeze_encoders && config.augment.is_none();
    let working = Model::new(model.config.clone(), params.clone());
    let mut prepared = if cache {
        train_set.iter().map(|s| prepare(&working, s, true)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let n_batches = train_set.len().div_ceil(config.batch_size);
    let max_iter = match config.max_iterations {
        Some(m) => m.min(n_batches * config.epochs),
        None => n_batches * config.epochs,
    };
    let mut iter = start_epoch * n_batches;
    let mut curve = Vec::new();
    let snapshot = |params: &ParamStore, sgd: &Sgd, epoch: usize, val_j: Option<f64>| Checkpoint {
        meta: CheckpointMeta {
            epoch,
            val_j,
            config_hash: hash.clone(),
            config: meta_config.clone(),
        },
        params: params.clone(),
        optimizer: sgd.velocity.clone(),
    };
    let mut best: Option<Checkpoint> = resume.cloned();

    for epoch in start_epoch..config.epochs {
        if iter >= max_iter {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let (mut total, mut seen, mut lr) = (0.0, 0usize, 0.0);
        for batch in order.chunks(config.batch_size) {
            if iter >= max_iter {
                break;
            }
            if !cache {
                let model_now = Model::new(model.config.clone(), params.clone());
                prepared = batch
                    .iter()
                    .map(|&i| prepare(&model_now, &augment(&train_set[i], &config.augment, &mut rng), false))
                    .collect::<Result<_>>()?;
            }
            let items: Vec<&Prepared> = if cache {
                batch.iter().map(|&i| &prepared[i]).collect()
            } else {
                prepared.iter().collect()
            };
            let gt_refs: Vec<&BinaryMask> = items.iter().map(|p| &p.gt).collect();
            let guide = Tensor::stack(&items.iter().map(|p| &p.guide).collect::<Vec<_>>())?;
            let [_, _, h, w] = guide.dims4("train")?;
            let mut session = Session::new(&params).freeze(&frozen);
            let logits = if cache {
                let a = Tensor::stack(&items.iter().map(|p| &p.features.as_ref().unwrap().0).collect::<Vec<_>>())?;
                let m = Tensor::stack(&items.iter().map(|p| &p.features.as_ref().unwrap().1).collect::<Vec<_>>())?;
                forward_features(&mut session, &model.config, &a, &m, Some(&guide), NormMode::Train, h, w)?
            } else {
                let x = Tensor::stack(&items.iter().map(|p| &p.frame).collect::<Vec<_>>())?;
                let o = Tensor::stack(&items.iter().map(|p| &p.flow).collect::<Vec<_>>())?;
                forward(&mut session, &model.config, &x, &o, Some(&guide), encoder_mode, NormMode::Train)?
            };
            let loss = cross_entropy_loss(&logits, &gt_refs)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, iteration {iter}"
                )));
            }
            loss.backward()?;
            let grads = session.grads();
            session.into_stats().apply(&mut params)?;
            lr = config.lr_policy.rate(config.base_lr, epoch, iter, max_iter)?;
            sgd.step(&mut params, &grads, lr)?;
            total += value * batch.len() as f64;
            seen += batch.len();
            iter += 1;
        }

        let val_j = if val_set.is_empty() {
            None
        } else {
            let m = Model::new(model.config.clone(), params.clone());
            Some(mean_j(&evaluate_model(&m, val_set, None)?))
        };
        curve.push(EpochRecord {
            epoch,
            lr,
            train_loss: total / seen.max(1) as f64,
            val_j,
        });
        let improves = match (&best, val_j) {
            (_, None) => true,
            (None, Some(_)) => true,
            (Some(b), Some(v)) => b.meta.val_j.is_none_or(|bv| v > bv),
        };
        if improves {
            best = Some(snapshot(&params, &sgd, epoch + 1, val_j));
        }
    }
    let last_epoch = curve.last().map_or(start_epoch, |r| r.epoch + 1);
    let last = snapshot(&params, &sgd, last_epoch, curve.last().and_then(|r| r.val_j));
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        curve,
    })
}
