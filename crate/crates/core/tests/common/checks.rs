//! Exact checks shared by the integration tests and the acceptance suite.
//! Each returns the cases that failed, so an empty list is a pass.

use guidevos::data::{
    load_sequence, read_flo, save_sequence, synth_sequence, write_flo, BinaryMask, FlowField,
};
use guidevos::metrics::{boundary_f, jaccard};
use guidevos::net::{
    encode_streams, forward_features, forward_with_gates, init_params, pooled_guide, split_fg_bg, Model,
    NetConfig, Ng2Mode, VariantKind,
};
use guidevos::params::{Checkpoint, CheckpointMeta, ParamStore, Session};
use guidevos::tensor::{NormMode, Tensor};
use rand::Rng;

use super::{oracle_boundary_f, oracle_jaccard, random_mask, rng, synth_spec, uniform};

/// `F + B == R` bit for bit on random feature maps and guides.
pub fn partition(pairs: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut failures = Vec::new();
    for k in 0..pairs {
        let (n, c) = (r.random_range(1..3), r.random_range(1..9));
        let (h, w) = (r.random_range(1..5), r.random_range(1..5));
        let scale = 10f64.powi(r.random_range(-6..6));
        let feats = uniform(n * c * h * w, &mut r).into_iter().map(|v| v * scale).collect();
        let x = Tensor::new(&[n, c, h, w], feats).unwrap();
        let guide = BinaryMask::from_fn(8 * w, 8 * h, |_, _| r.random_bool(0.5));
        let mut g = Vec::new();
        for _ in 0..n {
            g.extend(guide.to_f64());
        }
        let g = Tensor::new(&[n, 1, 8 * h, 8 * w], g).unwrap();
        let (f, b) = split_fg_bg(&x, &g).unwrap();
        let bad = f
            .data()
            .iter()
            .zip(b.data())
            .zip(x.data())
            .filter(|((fv, bv), xv)| (*fv + *bv).to_bits() != xv.to_bits())
            .count();
        if bad > 0 {
            failures.push(format!("pair {k}: {bad} elements differ"));
        }
    }
    failures
}

fn compare(pred: &BinaryMask, gt: &BinaryMask, tol: f64, label: &str, failures: &mut Vec<String>) {
    let (j, oj) = (jaccard(pred, gt).unwrap(), oracle_jaccard(pred, gt));
    let (f, of) = (boundary_f(pred, gt, tol).unwrap(), oracle_boundary_f(pred, gt, tol));
    if j != oj || f != of {
        failures.push(format!("{label} tol {tol}: J {j} vs {oj}, F {f} vs {of}"));
    }
}

/// Every ordered pair of 3×3 masks, at tolerances 0, 1 and 2.
pub fn exhaustive_3x3() -> Vec<String> {
    let masks: Vec<BinaryMask> = (0u32..512)
        .map(|code| BinaryMask::from_fn(3, 3, |x, y| code >> (y * 3 + x) & 1 == 1))
        .collect();
    let mut failures = Vec::new();
    for (i, a) in masks.iter().enumerate() {
        for (k, b) in masks.iter().enumerate() {
            for tol in [0.0, 1.0, 2.0] {
                compare(a, b, tol, &format!("3x3 {i}/{k}"), &mut failures);
            }
        }
    }
    failures
}

/// Every ordered pair of axis-aligned rectangles (or empty) in a 5×5 frame.
pub fn exhaustive_rectangles() -> Vec<String> {
    let mut masks = vec![BinaryMask::empty(5, 5)];
    for x0 in 0..5 {
        for x1 in x0..5 {
            for y0 in 0..5 {
                for y1 in y0..5 {
                    masks.push(BinaryMask::from_fn(5, 5, |x, y| {
                        (x0..=x1).contains(&x) && (y0..=y1).contains(&y)
                    }));
                }
            }
        }
    }
    let mut failures = Vec::new();
    for (i, a) in masks.iter().enumerate() {
        for (k, b) in masks.iter().enumerate() {
            for tol in [1.0, 1.5] {
                compare(a, b, tol, &format!("rect {i}/{k}"), &mut failures);
            }
        }
    }
    failures
}

/// Random 16×16 pairs of varying density and smoothness.
pub fn random_16x16(pairs: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut failures = Vec::new();
    for k in 0..pairs {
        let p = r.random_range(0.05..0.95);
        let a = random_mask(16, 16, p, &mut r);
        let b = if k % 2 == 0 {
            random_mask(16, 16, p, &mut r)
        } else {
            let noise = random_mask(16, 16, 0.1, &mut r);
            BinaryMask::from_fn(16, 16, |x, y| a.get(x, y) ^ noise.get(x, y))
        };
        let tol = [0.0, 1.0, 2.0, 3.0][k % 4];
        compare(&a, &b, tol, &format!("random {k}"), &mut failures);
    }
    failures
}

/// A one-pixel shift of an object away from the frame border scores `F = 1`.
pub fn translation_f(seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut failures = Vec::new();
    for k in 0..50 {
        let blob = random_mask(12, 12, 0.6, &mut r);
        let gt = BinaryMask::from_fn(20, 20, |x, y| {
            (4..16).contains(&x) && (4..16).contains(&y) && blob.get(x - 4, y - 4)
        });
        let (dx, dy) = [(1, 0), (-1, 0), (0, 1), (0, -1)][k % 4];
        let pred = gt.translated(dx, dy);
        for tol in [1.0, 2.0] {
            let f = boundary_f(&pred, &gt, tol).unwrap();
            if f != 1.0 {
                failures.push(format!("shift {k} ({dx},{dy}) tol {tol}: F {f}"));
            }
        }
    }
    failures
}

/// NG2 against the guided path with explicit gates: all ones on both
/// branches for the shared mode, ones and zeros for the literal split.
pub fn ng2_equivalence(seed: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for mode in [Ng2Mode::Shared, Ng2Mode::Literal] {
        let mut config = NetConfig::desk().with_variant(VariantKind::Ng2);
        config.ng2_mode = mode;
        let store = init_params(&config, &mut rng(seed)).unwrap();
        let mut r = rng(seed + 1);
        let (n, h, w) = (2, 21, 30);
        let frames = Tensor::new(&[n, 3, h, w], uniform(n * 3 * h * w, &mut r)).unwrap();
        let flows = Tensor::new(&[n, 3, h, w], uniform(n * 3 * h * w, &mut r)).unwrap();
        for norm in [NormMode::Train, NormMode::Eval] {
            let mut s = Session::new(&store);
            let (a, m) = encode_streams(&mut s, &config, &frames, &flows, norm).unwrap();
            let ng2 = forward_features(&mut s, &config, &a, &m, None, norm, h, w).unwrap();
            let gate_shape = [n, 1, a.shape()[2], a.shape()[3]];
            let ones = Tensor::ones(&gate_shape);
            let bg_gate = match mode {
                Ng2Mode::Shared => ones.clone(),
                Ng2Mode::Literal => Tensor::zeros(&gate_shape),
            };
            let gated = forward_with_gates(&mut s, &config, &a, &m, &ones, &bg_gate, norm, h, w).unwrap();
            let guide = Tensor::ones(&[n, 1, h, w]);
            let pooled = pooled_guide(&guide).unwrap();
            if pooled.data().iter().any(|&v| v != 1.0) {
                failures.push(format!("{mode:?}: pooled all-ones guide is not all ones"));
            }
            let same = ng2.data().iter().zip(gated.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                failures.push(format!("{mode:?} {norm:?}: outputs differ"));
            }
        }
    }
    failures
}

pub fn flo_roundtrip(seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut failures = Vec::new();
    for k in 0..20 {
        let (w, h) = (r.random_range(1..40), r.random_range(1..40));
        let mut field = FlowField::from_fn(w, h, |_, _| [r.random_range(-50.0..50.0), r.random_range(-50.0..50.0)]);
        if k % 3 == 0 {
            field = FlowField::from_fn(w, h, |x, y| if (x + y) % 5 == 0 { [1e10, 1e10] } else { field.get(x, y) });
        }
        let bytes = write_flo(&field);
        if bytes.len() != 12 + 8 * w * h {
            failures.push(format!("field {k}: {} bytes", bytes.len()));
        }
        match read_flo(&bytes) {
            Ok(back) if back == field => {}
            Ok(_) => failures.push(format!("field {k}: values changed")),
            Err(e) => failures.push(format!("field {k}: {e}")),
        }
    }
    failures
}

pub fn dataset_roundtrip(seed: u64) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = synth_spec(40, 1, 0.8);
    spec.n_frames = 4;
    let mut failures = Vec::new();
    for k in 0..3 {
        let rec = synth_sequence(seed + k, &format!("seq{k}"), &spec).unwrap();
        let path = save_sequence(dir.path(), &rec).unwrap();
        match load_sequence(&path) {
            Ok(back) if back == rec => {}
            Ok(_) => failures.push(format!("{}: record changed", rec.name)),
            Err(e) => failures.push(format!("{}: {e}", rec.name)),
        }
    }
    failures
}

/// Saving and reloading a checkpoint leaves eval-mode logits bit-identical.
pub fn checkpoint_roundtrip(seed: u64) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = synth_spec(48, 1, 0.8);
    spec.n_frames = 3;
    let rec = synth_sequence(seed, "ck", &spec).unwrap();
    let samples =
        guidevos::train::samples_from_sequence(&rec, Some("synth"), guidevos::data::FlowNormalization::PerFrameMax)
            .unwrap();
    let mut failures = Vec::new();
    for variant in VariantKind::ALL {
        let config = NetConfig::desk().with_variant(variant);
        let mut params = init_params(&config, &mut rng(seed)).unwrap();
        perturb_running_stats(&mut params, seed);
        let ckpt = Checkpoint {
            meta: CheckpointMeta {
                epoch: 3,
                val_j: Some(0.5),
                config_hash: "0123456789abcdef".into(),
                config: serde_json::to_value(&config).unwrap(),
            },
            params: params.clone(),
            optimizer: ParamStore::new(),
        };
        let path = dir.path().join(format!("{variant}.ckpt"));
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        if back != ckpt {
            failures.push(format!("{variant}: checkpoint changed"));
        }
        let before = Model::new(config.clone(), params);
        let after = Model::new(config, back.params);
        let frames: Vec<_> = samples.iter().map(|s| &s.frame).collect();
        let flows: Vec<_> = samples.iter().map(|s| &s.flow_image).collect();
        let guides: Vec<_> = samples.iter().map(|s| &s.guide).collect();
        let (la, ma) = before.predict_batch(&frames, &flows, Some(&guides)).unwrap();
        let (lb, mb) = after.predict_batch(&frames, &flows, Some(&guides)).unwrap();
        let same = la.data().iter().zip(lb.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same || ma != mb {
            failures.push(format!("{variant}: eval outputs differ after reload"));
        }
    }
    failures
}

fn perturb_running_stats(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed ^ 0xabc);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        if name.ends_with(".running_mean") || name.ends_with(".running_var") {
            let e = store.get_mut(&name).unwrap();
            e.data.iter_mut().for_each(|v| *v += r.random_range(0.0..0.5));
        }
    }
}
