#![allow(dead_code)]

pub mod checks;
pub mod grad;
pub mod runs;

use guidevos::data::{synth_sequence, BinaryMask, FlowNormalization, GuideNoise, SynthSpec};
use guidevos::train::{samples_from_sequence, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_mask(w: usize, h: usize, p: f64, rng: &mut impl Rng) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn synth_spec(size: usize, distractors: usize, guide_strength: f64) -> SynthSpec {
    let mut spec = SynthSpec::default();
    spec.width = size;
    spec.height = size;
    spec.object.min_size = size * 28 / 96;
    spec.object.max_size = size / 2;
    spec.object.distractors = distractors;
    spec.guide_noise = GuideNoise::with_strength(guide_strength);
    spec
}

/// Samples of `n` sequences with seeds `seed0, seed0 + 1, ...`.
pub fn synth_samples(seed0: u64, n: usize, spec: &SynthSpec, tag: &str) -> Vec<Sample> {
    (0..n)
        .flat_map(|i| {
            let rec = synth_sequence(seed0 + i as u64, &format!("{tag}{i:03}"), spec).unwrap();
            samples_from_sequence(&rec, Some("synth"), FlowNormalization::PerFrameMax).unwrap()
        })
        .collect()
}

/// Pixel-count intersection over union.
pub fn oracle_jaccard(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (w, h) = a.dims();
    let (mut i, mut u) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            let (p, q) = (a.get(x, y), b.get(x, y));
            if p && q {
                i += 1;
            }
            if p || q {
                u += 1;
            }
        }
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

/// Boundary pixels by explicit neighbour tests.
pub fn oracle_contour(m: &BinaryMask) -> Vec<(i64, i64)> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if inside(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| !inside(x + dx, y + dy)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Contour F-measure from all pairwise contour distances.
pub fn oracle_boundary_f(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> f64 {
    let (cp, cg) = (oracle_contour(pred), oracle_contour(gt));
    match (cp.is_empty(), cg.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let within = |p: &(i64, i64), set: &[(i64, i64)]| {
        set.iter()
            .any(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64) <= tol * tol)
    };
    let precision = cp.iter().filter(|p| within(p, &cg)).count() as f64 / cp.len() as f64;
    let recall = cg.iter().filter(|p| within(p, &cp)).count() as f64 / cg.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
