//! Central-difference gradient checks shared by the gradient tests and the
//! acceptance suite.

use guidevos::net::{forward, init_params, NetConfig, VariantKind};
use guidevos::params::{is_buffer, ParamStore, Session};
use guidevos::tensor::{
    avg_pool, batch_norm, bce_with_logits, bilinear_upsample, concat_channels, conv2d, crop,
    replicate_pad_to_multiple, split_by_gate, ConvSpec, NormMode, RunningStats, Tensor,
};
use rand::seq::index::sample;
use rand::Rng;

use super::{rel_err, rng, uniform};

pub const STEP: f64 = 1e-5;

type Input = (Vec<usize>, Vec<f64>);

/// Largest relative error between analytic and central-difference
/// gradients of `sum(w ⊙ f(inputs))` over all inputs, with random `w`.
pub fn check_op(f: impl Fn(&[Tensor]) -> Tensor, inputs: &[Input], seed: u64) -> f64 {
    let leaves: Vec<Tensor> = inputs.iter().map(|(s, d)| Tensor::param(s, d.clone()).unwrap()).collect();
    let out = f(&leaves);
    let weights = Tensor::new(out.shape(), uniform(out.len(), &mut rng(seed))).unwrap();
    let loss = |out: Tensor| out.mul(&weights).unwrap().sum();
    loss(out).backward().unwrap();

    let mut worst: f64 = 0.0;
    for (k, (_, data)) in inputs.iter().enumerate() {
        let analytic = leaves[k].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        let numeric: Vec<f64> = (0..data.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let args: Vec<Tensor> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, (s, d))| {
                            let mut d = d.clone();
                            if j == k {
                                d[i] += delta;
                            }
                            Tensor::new(s, d).unwrap()
                        })
                        .collect();
                    loss(f(&args)).item().unwrap()
                };
                (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn input(shape: &[usize], seed: u64) -> Input {
    let n = shape.iter().product();
    (shape.to_vec(), uniform(n, &mut rng(seed)))
}

/// Values bounded away from zero so ReLU kinks are never crossed.
fn off_zero(shape: &[usize], seed: u64) -> Input {
    let (s, d) = input(shape, seed);
    (s, d.into_iter().map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 }).collect())
}

fn in_unit(shape: &[usize], seed: u64) -> Input {
    let (s, d) = input(shape, seed);
    (s, d.into_iter().map(|v| 0.05 + 0.45 * (v + 1.0)).collect())
}

/// `(op, worst relative error)` for every differentiable operation.
pub fn op_suite() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| out.push((name.to_string(), err));
    let x = [2, 3, 4, 5];

    push("add", check_op(|t| t[0].add(&t[1]).unwrap(), &[input(&x, 1), input(&x, 2)], 0));
    push("sub", check_op(|t| t[0].sub(&t[1]).unwrap(), &[input(&x, 3), input(&x, 4)], 0));
    push("mul", check_op(|t| t[0].mul(&t[1]).unwrap(), &[input(&x, 5), input(&x, 6)], 0));
    push(
        "mul_broadcast",
        check_op(|t| t[0].mul(&t[1]).unwrap(), &[input(&x, 7), input(&[2, 1, 4, 5], 8)], 0),
    );
    push("scale", check_op(|t| t[0].scale(-1.7), &[input(&x, 9)], 0));
    push("mean", check_op(|t| t[0].mean().scale(3.0), &[input(&x, 10)], 0));
    push("relu", check_op(|t| t[0].relu(), &[off_zero(&x, 11)], 0));
    push("sigmoid", check_op(|t| t[0].sigmoid(), &[input(&x, 12)], 0));
    push(
        "concat_channels",
        check_op(
            |t| concat_channels(&[&t[0], &t[1]]).unwrap(),
            &[input(&[2, 2, 3, 3], 13), input(&[2, 3, 3, 3], 14)],
            0,
        ),
    );
    let (gs, gd) = in_unit(&[2, 1, 4, 5], 16);
    let gate = Tensor::new(&gs, gd).unwrap();
    push(
        "split_by_gate",
        check_op(
            |t| {
                let (a, b) = split_by_gate(&t[0], &gate).unwrap();
                concat_channels(&[&a, &b.scale(2.0)]).unwrap()
            },
            &[input(&x, 15)],
            0,
        ),
    );
    let target: Vec<f64> = in_unit(&x, 17).1;
    push(
        "bce_with_logits",
        check_op(|t| bce_with_logits(&t[0].scale(4.0), &target).unwrap(), &[input(&x, 18)], 0),
    );

    let convs = [
        ("conv3x3", ConvSpec::same3x3(3, 4, 1)),
        ("conv3x3_dilated", ConvSpec::same3x3(3, 4, 2)),
        ("conv3x3_stride2", ConvSpec::same3x3(3, 4, 1).with_stride(2)),
        ("conv1x1", ConvSpec::pointwise(3, 4)),
    ];
    for (k, (name, spec)) in convs.into_iter().enumerate() {
        let w = input(&spec.weight_shape(), 20 + k as u64);
        let b = input(&[spec.out_channels], 30 + k as u64);
        push(
            name,
            check_op(
                |t| conv2d(&t[0], &spec, &t[1], Some(&t[2])).unwrap(),
                &[input(&[2, 3, 7, 6], 40 + k as u64), w, b],
                0,
            ),
        );
    }
    let nobias = ConvSpec::same3x3(3, 2, 1).with_bias(false);
    push(
        "conv3x3_nobias",
        check_op(
            |t| conv2d(&t[0], &nobias, &t[1], None).unwrap(),
            &[input(&[1, 3, 5, 5], 50), input(&nobias.weight_shape(), 51)],
            0,
        ),
    );

    let mut stats = RunningStats::new(3);
    stats.mean = vec![0.3, -0.2, 0.1];
    stats.var = vec![0.5, 1.5, 2.0];
    for (name, mode) in [("batch_norm_train", NormMode::Train), ("batch_norm_eval", NormMode::Eval)] {
        push(
            name,
            check_op(
                |t| batch_norm(&t[0], &t[1], &t[2], &stats, mode).unwrap().output,
                &[input(&x, 60), input(&[3], 61), input(&[3], 62)],
                0,
            ),
        );
    }

    push("avg_pool", check_op(|t| avg_pool(&t[0], 2).unwrap(), &[input(&[2, 2, 4, 6], 70)], 0));
    push("avg_pool_ragged", check_op(|t| avg_pool(&t[0], 4).unwrap(), &[input(&[1, 2, 5, 7], 71)], 0));
    push(
        "replicate_pad",
        check_op(|t| replicate_pad_to_multiple(&t[0], 4).unwrap(), &[input(&[1, 2, 5, 3], 72)], 0),
    );
    push(
        "bilinear_upsample",
        check_op(|t| bilinear_upsample(&t[0], 8).unwrap(), &[input(&[1, 2, 2, 3], 73)], 0),
    );
    push("crop", check_op(|t| crop(&t[0], 3, 2).unwrap(), &[input(&[2, 2, 4, 5], 74)], 0));
    out
}

/// Inputs for a whole-network check: frames, flow images, guide, target.
pub struct NetBatch {
    pub frames: Tensor,
    pub flows: Tensor,
    pub guide: Tensor,
    pub target: Vec<f64>,
}

pub fn net_batch(n: usize, size: usize, seed: u64) -> NetBatch {
    let mut r = rng(seed);
    let shape = [n, 3, size, size];
    let plane = n * size * size;
    NetBatch {
        frames: Tensor::new(&shape, uniform(3 * plane, &mut r)).unwrap(),
        flows: Tensor::new(&shape, uniform(3 * plane, &mut r)).unwrap(),
        guide: Tensor::new(&[n, 1, size, size], (0..plane).map(|_| r.random_range(0..2) as f64).collect())
            .unwrap(),
        target: (0..plane).map(|_| r.random_range(0..2) as f64).collect(),
    }
}

pub fn net_loss<'a>(store: &'a ParamStore, config: &NetConfig, batch: &NetBatch, mode: NormMode) -> (f64, Session<'a>) {
    let mut s = Session::new(store);
    let logits = forward(&mut s, config, &batch.frames, &batch.flows, Some(&batch.guide), mode, mode).unwrap();
    let loss = bce_with_logits(&logits, &batch.target).unwrap();
    loss.backward().unwrap();
    (loss.item().unwrap(), s)
}

/// Random parameters. Running statistics are set near the statistics of
/// `batch`, as they would be after training, so eval-mode activations keep
/// their scale through the deep stacks.
pub fn net_params(config: &NetConfig, batch: &NetBatch, seed: u64) -> ParamStore {
    let mut store = init_params(config, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 1);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        if name.ends_with(".bn.weight") || name.ends_with(".bn.bias") {
            let entry = store.get_mut(name).unwrap();
            entry.data.iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
        }
    }
    for _ in 0..60 {
        let (_, s) = net_loss(&store, config, batch, NormMode::Train);
        let stats = s.into_stats();
        stats.apply(&mut store).unwrap();
    }
    for name in &names {
        if name.ends_with(".running_mean") || name.ends_with(".running_var") {
            let entry = store.get_mut(name).unwrap();
            entry.data.iter_mut().for_each(|v| *v *= r.random_range(0.8..1.25));
        }
    }
    store
}

/// `(parameter, relative error)` for every trainable tensor of the network,
/// comparing at most `per_tensor` randomly chosen coordinates.
pub fn net_suite(variant: VariantKind, mode: NormMode, size: usize, per_tensor: usize, seed: u64) -> Vec<(String, f64)> {
    let config = NetConfig::desk().with_variant(variant);
    let batch = net_batch(4, size, seed + 4);
    let store = net_params(&config, &batch, seed);
    let (_, session) = net_loss(&store, &config, &batch, mode);
    let grads = session.grads();
    drop(session);

    let mut pick = rng(99);
    let mut out = Vec::new();
    for (name, entry) in store.iter() {
        if is_buffer(name) {
            continue;
        }
        let len = entry.data.len();
        let coords: Vec<usize> = sample(&mut pick, len, per_tensor.min(len)).into_vec();
        let analytic: Vec<f64> = coords.iter().map(|&i| grads[name][i]).collect();
        let numeric: Vec<f64> = coords
            .iter()
            .map(|&i| {
                let eval = |delta: f64| {
                    let mut shifted = store.clone();
                    shifted.get_mut(name).unwrap().data[i] += delta;
                    net_loss(&shifted, &config, &batch, mode).0
                };
                (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
            })
            .collect();
        out.push((name.to_string(), rel_err(&analytic, &numeric)));
    }
    out
}
