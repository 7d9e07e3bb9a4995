mod common;

use common::{rng, runs, synth_samples, synth_spec};
use guidevos::data::{synth_sequence, BinaryMask, FlowNormalization};
use guidevos::encoders::{head_predict, image_batch, mask_batch, pretrain_motion, PretrainConfig, MOTION};
use guidevos::metrics::jaccard;
use guidevos::net::{forward, init_params, Model, NetConfig, VariantKind, ENCODER_PREFIXES};
use guidevos::params::{is_buffer, ParamStore, Session};
use guidevos::tensor::{NormMode, Tensor};
use guidevos::train::{
    cross_entropy_loss, samples_from_sequence, train, AugmentConfig, LrPolicy, Sample, Sgd, SgdConfig,
    TrainConfig,
};
use guidevos::Error;

fn small_set(seed: u64, n: usize, tag: &str) -> Vec<Sample> {
    let mut spec = synth_spec(32, 0, 0.5);
    spec.n_frames = 3;
    spec.object.min_size = 10;
    spec.object.max_size = 16;
    synth_samples(seed, n, &spec, tag)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs: 4,
        base_lr: 0.02,
        augment: AugmentConfig::none(),
        lr_policy: LrPolicy::Step { every: 2, gamma: 0.5 },
        ..TrainConfig::default()
    }
}

fn model(variant: VariantKind, seed: u64) -> Model {
    let config = NetConfig::desk().with_variant(variant);
    let params = init_params(&config, &mut rng(seed)).unwrap();
    Model::new(config, params)
}

fn bits(store: &ParamStore) -> Vec<(String, Vec<u64>)> {
    store
        .iter()
        .map(|(n, e)| (n.to_string(), e.data.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn overfits_four_samples() {
    let run = runs::default_overfit();
    assert!(run.train_j >= 0.95, "train J {}", run.train_j);
    assert_eq!(run.iterations, 200);
}

#[test]
fn training_is_deterministic() {
    let train_set = small_set(10, 3, "t");
    let m = model(VariantKind::Guided, 1);
    let mut cfg = small_config();
    cfg.augment = AugmentConfig::default();
    let a = train(&m, &train_set, &[], &cfg, None).unwrap();
    let b = train(&m, &train_set, &[], &cfg, None).unwrap();
    assert_eq!(bits(&a.last.params), bits(&b.last.params));
    cfg.seed = 1;
    let c = train(&m, &train_set, &[], &cfg, None).unwrap();
    assert_ne!(bits(&a.last.params), bits(&c.last.params));
}

#[test]
fn frozen_encoders_are_untouched() {
    let train_set = small_set(20, 2, "t");
    let m = model(VariantKind::Guided, 2);
    for augment in [AugmentConfig::none(), AugmentConfig::default()] {
        let cfg = TrainConfig { augment, ..small_config() };
        let out = train(&m, &train_set, &[], &cfg, None).unwrap();
        for prefix in ENCODER_PREFIXES {
            assert_eq!(bits(&out.last.params.subset(prefix)), bits(&m.params.subset(prefix)), "{prefix}");
        }
        assert_ne!(bits(&out.last.params.subset("decoder.")), bits(&m.params.subset("decoder.")));
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let train_set = small_set(30, 3, "t");
    let m = model(VariantKind::Guided, 3);
    let full = train(&m, &train_set, &[], &small_config(), None).unwrap();
    let first = train(&m, &train_set, &[], &TrainConfig { epochs: 2, ..small_config() }, None).unwrap();
    assert_eq!(first.last.meta.epoch, 2);
    let rest = train(&m, &train_set, &[], &small_config(), Some(&first.last)).unwrap();
    assert_eq!(rest.curve.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(rest.curve[0].lr, full.curve[2].lr);
    assert_eq!(rest.curve[0].lr, 0.01);
    assert_eq!(bits(&rest.last.params), bits(&full.last.params));
    assert_eq!(bits(&rest.last.optimizer), bits(&full.last.optimizer));
}

#[test]
fn best_checkpoint_tracks_validation() {
    let train_set = small_set(40, 3, "t");
    let val_set = small_set(50, 1, "v");
    let out = train(&model(VariantKind::Guided, 4), &train_set, &val_set, &small_config(), None).unwrap();
    let best_j = out.curve.iter().filter_map(|r| r.val_j).fold(f64::MIN, f64::max);
    assert_eq!(out.best.meta.val_j, Some(best_j));
    let epoch = out.curve.iter().find(|r| r.val_j == Some(best_j)).unwrap().epoch;
    assert_eq!(out.best.meta.epoch, epoch + 1);
}

#[test]
fn overlapping_splits_are_rejected() {
    let train_set = small_set(60, 2, "t");
    let err = train(&model(VariantKind::Guided, 5), &train_set, &train_set[..1], &small_config(), None);
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn divergence_is_reported() {
    let train_set = small_set(70, 1, "t");
    let cfg = TrainConfig {
        base_lr: 1e150,
        epochs: 30,
        ..small_config()
    };
    match train(&model(VariantKind::Guided, 6), &train_set, &[], &cfg, None) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("epoch") && msg.contains("iteration"), "{msg}"),
        other => panic!("expected a numeric error, got {:?}", other.map(|o| o.curve.len())),
    }
}

fn batch_loss<'a>(store: &'a ParamStore, config: &NetConfig, samples: &[Sample]) -> (f64, Session<'a>) {
    let frames = image_batch(&samples.iter().map(|s| &s.frame).collect::<Vec<_>>()).unwrap();
    let flows = image_batch(&samples.iter().map(|s| &s.flow_image).collect::<Vec<_>>()).unwrap();
    let guide = mask_batch(&samples.iter().map(|s| &s.guide).collect::<Vec<_>>()).unwrap();
    let gt: Vec<&BinaryMask> = samples.iter().map(|s| &s.gt).collect();
    let mut s = Session::new(store);
    let logits = forward(&mut s, config, &frames, &flows, Some(&guide), NormMode::Train, NormMode::Train).unwrap();
    let loss = cross_entropy_loss(&logits, &gt).unwrap();
    loss.backward().unwrap();
    (loss.item().unwrap(), s)
}

#[test]
fn small_step_descends() {
    let samples = small_set(80, 1, "t");
    let m = model(VariantKind::Guided, 7);
    let (before, s) = batch_loss(&m.params, &m.config, &samples);
    let grads = s.grads();
    drop(s);
    let mut params = m.params.clone();
    let plain = SgdConfig {
        momentum: 0.0,
        weight_decay: 0.0,
    };
    Sgd::new(plain).step(&mut params, &grads, 1e-3).unwrap();
    let (after, _) = batch_loss(&params, &m.config, &samples);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn every_trainable_tensor_receives_gradient() {
    let samples = small_set(90, 1, "t");
    for variant in VariantKind::ALL {
        let m = model(variant, 8);
        let (_, s) = batch_loss(&m.params, &m.config, &samples);
        for (name, g) in s.grads() {
            if !is_buffer(&name) {
                assert!(g.iter().any(|&v| v != 0.0), "{variant}: {name} has zero gradient");
            }
        }
    }
}

/// Exchanging the guide with its complement while swapping the two branch
/// stacks (and the decoder inputs they feed) leaves the prediction unchanged.
#[test]
fn foreground_background_swap_symmetry() {
    let m = model(VariantKind::Guided, 9);
    let config = &m.config;
    let mut swapped = m.params.clone();
    for (name, entry) in m.params.iter() {
        if let Some(rest) = name.strip_prefix("fg.") {
            swapped.get_mut(&format!("bg.{rest}")).unwrap().data = entry.data.clone();
        }
        if let Some(rest) = name.strip_prefix("bg.") {
            swapped.get_mut(&format!("fg.{rest}")).unwrap().data = entry.data.clone();
        }
    }
    let w = swapped.get_mut("decoder.0.weight").unwrap();
    let [o, i, kh, kw] = [w.shape[0], w.shape[1], w.shape[2], w.shape[3]];
    let block = kh * kw;
    let half = i / 2;
    let original = w.data.clone();
    for oc in 0..o {
        for ic in 0..i {
            let src = (oc * i + (ic + half) % i) * block;
            let dst = (oc * i + ic) * block;
            w.data[dst..dst + block].copy_from_slice(&original[src..src + block]);
        }
    }

    let mut r = rng(10);
    let (n, h, wd) = (2, 24, 32);
    let frames = Tensor::new(&[n, 3, h, wd], common::uniform(n * 3 * h * wd, &mut r)).unwrap();
    let flows = Tensor::new(&[n, 3, h, wd], common::uniform(n * 3 * h * wd, &mut r)).unwrap();
    let guide_mask = BinaryMask::from_fn(wd, h, |x, y| (x * 7 + y * 3) % 5 < 2);
    let guide = mask_batch(&[&guide_mask, &guide_mask.invert()]).unwrap();
    let inverted = mask_batch(&[&guide_mask.invert(), &guide_mask]).unwrap();
    for mode in [NormMode::Train, NormMode::Eval] {
        let mut s = Session::new(&m.params);
        let a = forward(&mut s, config, &frames, &flows, Some(&guide), mode, mode).unwrap();
        let mut s = Session::new(&swapped);
        let b = forward(&mut s, config, &frames, &flows, Some(&inverted), mode, mode).unwrap();
        let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{mode:?}: {worst}");
    }
}

#[test]
fn guide_changes_guided_output_only() {
    let mut spec = synth_spec(32, 0, 0.5);
    spec.n_frames = 2;
    let rec = synth_sequence(5, "g", &spec).unwrap();
    let s = &samples_from_sequence(&rec, Some("synth"), FlowNormalization::PerFrameMax).unwrap()[0];
    let empty = BinaryMask::empty(32, 32);
    for variant in VariantKind::ALL {
        let m = model(variant, 11);
        let (with, _) = m.predict_batch(&[&s.frame], &[&s.flow_image], Some(&[&s.guide])).unwrap();
        let (without, _) = m.predict_batch(&[&s.frame], &[&s.flow_image], Some(&[&empty])).unwrap();
        assert_eq!(with.data() != without.data(), variant.uses_guide(), "{variant}");
    }
}

#[test]
fn motion_pretraining_learns_to_segment_flow() {
    let mut spec = synth_spec(64, 0, 0.0);
    spec.object.min_size = 18;
    spec.object.max_size = 32;
    let pairs = |seed: u64, n: usize| -> Vec<_> {
        synth_samples(seed, n, &spec, "p")
            .into_iter()
            .map(|s| (s.flow_image, s.gt))
            .collect()
    };
    let train_pairs: Vec<_> = pairs(500, 7).into_iter().take(50).collect();
    let held_out = pairs(600, 2);
    let cfg = PretrainConfig {
        epochs: 8,
        base_lr: 0.1,
        ..PretrainConfig::default()
    };
    let enc = NetConfig::desk().encoder;
    let out = pretrain_motion(&enc, &train_pairs, &cfg).unwrap();
    assert!(out.losses[..5].windows(2).all(|w| w[1] < w[0]), "{:?}", out.losses);
    let j: f64 = held_out
        .iter()
        .map(|(img, gt)| jaccard(&head_predict(MOTION, &enc, &out, img).unwrap(), gt).unwrap())
        .sum::<f64>()
        / held_out.len() as f64;
    assert!(j >= 0.7, "held-out J {j}");
    assert!(out.params.names().all(|n| n.starts_with("motion.")));
}

#[test]
fn ng2_matches_explicit_gates() {
    let failures = common::checks::ng2_equivalence(2);
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn fg_bg_partition_is_exact() {
    let failures = common::checks::partition(100, 1);
    assert!(failures.is_empty(), "{failures:?}");
}
