use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use guidevos::data::{
    list_sequences, load_mask_dir, load_sequence, save_masks, save_sequence, synth_sequence, BinaryMask,
    FlowNormalization, GuideNoise, ShapeKind, SynthSpec, SYNTH_GUIDE,
};
use guidevos::encoders::{pretrain_appearance, pretrain_motion, PretrainConfig};
use guidevos::metrics::{
    evaluate_dataset, evaluate_sequence, format_csv, format_sequence_csv, format_table, jaccard, EvalReport,
};
use guidevos::net::{init_head, init_params, Model, NetConfig, Ng2Mode, VariantKind};
use guidevos::params::{Checkpoint, ParamStore};
use guidevos::train::{
    check_disjoint, checkpoint_net_config, curve_csv, run_ablation, samples_from_sequence, train as train_model, AblationConfig,
    AugmentConfig, LrPolicy, Sample, SgdConfig, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{key, required, Key, RunConfig};
use crate::{CliError, THREADS_ENV};

const OUT: Key = key("out", "runs", "parent directory of the run directory");

pub const SYNTH_KEYS: &[Key] = &[
    OUT,
    key("seed", "0", "dataset seed"),
    key("sequences", "5", "number of sequences"),
    key("frames", "8", "frames per sequence"),
    key("width", "96", "frame width"),
    key("height", "96", "frame height"),
    key("shape", "any", "object shape: rectangle, ellipse, blob or any"),
    key("min-size", "28", "smallest object side in pixels"),
    key("max-size", "48", "largest object side in pixels"),
    key("max-speed", "3", "largest object displacement per frame"),
    key("distractors", "0", "unannotated moving objects per sequence"),
    key("guide-noise", "1", "guide corruption strength, 0 copies the ground truth"),
];

pub const TRAIN_KEYS: &[Key] = &[
    OUT,
    required("train", "training dataset root"),
    key("val", "", "validation dataset root"),
    key("guide", SYNTH_GUIDE, "guide algorithm (subdirectory of guide/)"),
    key("flow-norm", "max", "flow colour scaling: `max` or a fixed magnitude"),
    key("variant", "guided", "guided, ng1 or ng2"),
    key("ng2-mode", "shared", "ng2 branch inputs: shared or literal"),
    key("scale", "16", "width divisor of the full-size network"),
    key("epochs", "20", "training epochs"),
    key("batch-size", "8", "minibatch size"),
    key("lr", "0.1", "base learning rate"),
    key("lr-policy", "step", "step or poly"),
    key("lr-step", "5", "epochs between step decays"),
    key("lr-gamma", "0.1", "step decay factor"),
    key("poly-power", "0.9", "poly decay exponent"),
    key("momentum", "0.9", "SGD momentum"),
    key("weight-decay", "0.0001", "L2 weight decay"),
    key("augment", "true", "blur, crop, rotate and flip training samples"),
    key("freeze-encoders", "true", "keep the pretrained encoders fixed"),
    key("pretrain-epochs", "8", "encoder pretraining epochs, 0 keeps random encoders"),
    key("pretrain-lr", "0.05", "encoder pretraining learning rate"),
    key("max-iterations", "", "stop after this many iterations"),
    key("seed", "0", "initialization and shuffling seed"),
    key("resume", "", "checkpoint to continue from"),
];

pub const INFER_KEYS: &[Key] = &[
    OUT,
    required("checkpoint", "trained checkpoint"),
    required("input", "sequence directory or dataset root"),
    key("guide", SYNTH_GUIDE, "guide algorithm (subdirectory of guide/)"),
    key("flow-norm", "max", "flow colour scaling: `max` or a fixed magnitude"),
    key("variant", "", "expected variant; must match the checkpoint"),
    key("threads", "", "worker threads"),
];

pub const EVAL_KEYS: &[Key] = &[
    OUT,
    required("pred", "comma-separated prediction roots, one mask directory per sequence"),
    required("gt", "ground-truth root, one directory per sequence"),
    key("names", "", "comma-separated row labels, default the directory names"),
    key("tolerance", "", "contour tolerance in pixels, default 0.8% of the diagonal"),
    key("threads", "", "worker threads"),
];

pub const ABLATE_KEYS: &[Key] = &[
    OUT,
    key("seeds", "0,1,2", "training seeds"),
    key("data-seed", "0", "dataset seed"),
    key("variants", "guided,ng1,ng2", "variants to compare"),
    key("train-sequences", "128", "training sequences"),
    key("val-sequences", "4", "validation sequences"),
    key("test-sequences", "10", "test sequences"),
    key("frames", "8", "frames per sequence"),
    key("size", "96", "frame width and height"),
    key("distractors", "2", "unannotated moving objects per sequence"),
    key("guide-noise", "0.8", "guide corruption strength"),
    key("scale", "16", "width divisor of the full-size network"),
    key("epochs", "20", "training epochs"),
    key("batch-size", "8", "minibatch size"),
    key("lr", "0.05", "base learning rate"),
    key("lr-policy", "poly", "step or poly"),
    key("lr-step", "5", "epochs between step decays"),
    key("lr-gamma", "0.1", "step decay factor"),
    key("poly-power", "0.9", "poly decay exponent"),
    key("augment", "false", "augment training samples"),
    key("pretrain-epochs", "4", "encoder pretraining epochs"),
    key("pretrain-lr", "0.05", "encoder pretraining learning rate"),
    key("tolerance", "", "contour tolerance in pixels"),
];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Creates `out/<command>-<hash>-<timestamp>` and writes the resolved config into it.
fn run_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = config.path("out").join(format!("{}-{}-{stamp}", config.command, config.hash()));
    let mut dir = base.clone();
    let mut k = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{k}", base.display()));
        k += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write(&dir.join("config.txt"), &config.to_text())?;
    eprintln!("run directory: {}", dir.display());
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn threads(config: &RunConfig) -> Result<usize, CliError> {
    let n = match config.opt::<usize>("threads")? {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .parse()
                .map_err(|e| CliError::Usage(format!("{THREADS_ENV}={v:?}: {e}")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    Ok(n.max(1))
}

/// `f` over `items` on up to `threads` workers, results in input order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(Option::unwrap).collect()
}

fn flow_norm(config: &RunConfig) -> Result<FlowNormalization, CliError> {
    match config.str("flow-norm") {
        "max" => Ok(FlowNormalization::PerFrameMax),
        _ => Ok(FlowNormalization::Fixed(config.get("flow-norm")?)),
    }
}

fn lr_policy(config: &RunConfig) -> Result<LrPolicy, CliError> {
    match config.str("lr-policy") {
        "step" => Ok(LrPolicy::Step {
            every: config.get("lr-step")?,
            gamma: config.get("lr-gamma")?,
        }),
        "poly" => Ok(LrPolicy::Poly {
            power: config.get("poly-power")?,
        }),
        other => Err(CliError::Usage(format!("--lr-policy: expected step or poly, got {other:?}"))),
    }
}

fn augment(config: &RunConfig) -> Result<AugmentConfig, CliError> {
    Ok(if config.flag("augment")? {
        AugmentConfig::default()
    } else {
        AugmentConfig::none()
    })
}

fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join("frames").is_dir() {
        return Ok(vec![root.to_path_buf()]);
    }
    let dirs = list_sequences(root)?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("{}: no sequence directories", root.display())));
    }
    Ok(dirs)
}

fn load_samples(root: &Path, guide: Option<&str>, norm: FlowNormalization) -> Result<Vec<Sample>, CliError> {
    let mut samples = Vec::new();
    for dir in sequence_dirs(root)? {
        samples.extend(samples_from_sequence(&load_sequence(&dir)?, guide, norm)?);
    }
    Ok(samples)
}

pub fn synth(config: &RunConfig) -> Result<(), CliError> {
    let shape: ShapeKind = serde_json::from_value(serde_json::Value::String(config.str("shape").into()))
        .map_err(|e| CliError::Usage(format!("--shape: {e}")))?;
    let mut spec = SynthSpec {
        n_frames: config.get("frames")?,
        width: config.get("width")?,
        height: config.get("height")?,
        guide_noise: GuideNoise::with_strength(config.get("guide-noise")?),
        ..SynthSpec::default()
    };
    spec.object.shape = shape;
    spec.object.min_size = config.get("min-size")?;
    spec.object.max_size = config.get("max-size")?;
    spec.object.max_speed = config.get("max-speed")?;
    spec.object.distractors = config.get("distractors")?;
    let seed: u64 = config.get("seed")?;
    let n: u64 = config.get("sequences")?;

    let dir = run_dir(config)?;
    let data = dir.join("data");
    let mut total = 0.0;
    for i in 0..n {
        let name = format!("s{seed}_{i:03}");
        let rec = synth_sequence(seed.wrapping_mul(100_003).wrapping_add(i), &name, &spec)?;
        save_sequence(&data, &rec)?;
        let gt = rec.gt.as_ref().expect("synthetic sequences carry ground truth");
        let guide = rec.guide(SYNTH_GUIDE).expect("synthetic sequences carry guides");
        let j = guide.iter().zip(gt).map(|(g, t)| jaccard(g, t)).sum::<guidevos::Result<f64>>()? / gt.len() as f64;
        total += j;
        println!("{name} guide J {j:.4}");
    }
    if n > 0 {
        println!("mean guide J {:.4}", total / n as f64);
    }
    println!("{}", data.display());
    Ok(())
}

fn net_config(config: &RunConfig) -> Result<NetConfig, CliError> {
    let variant: VariantKind = config.get("variant")?;
    let mut net = NetConfig::scaled(config.get("scale")?).with_variant(variant);
    net.ng2_mode = config.get::<Ng2Mode>("ng2-mode")?;
    net.validate()?;
    Ok(net)
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let norm = flow_norm(config)?;
    let tc = TrainConfig {
        batch_size: config.get("batch-size")?,
        epochs: config.get("epochs")?,
        base_lr: config.get("lr")?,
        lr_policy: lr_policy(config)?,
        seed: config.get("seed")?,
        augment: augment(config)?,
        sgd: SgdConfig {
            momentum: config.get("momentum")?,
            weight_decay: config.get("weight-decay")?,
        },
        freeze_encoders: config.flag("freeze-encoders")?,
        max_iterations: config.opt("max-iterations")?,
    };
    tc.validate()?;

    let resume = match config.opt::<PathBuf>("resume")? {
        Some(p) => Some(Checkpoint::load(&p)?),
        None => None,
    };
    let net = match &resume {
        Some(ckpt) => {
            let stored = checkpoint_net_config(ckpt)?;
            if config.explicit.contains("variant") && stored.variant.to_string() != config.str("variant") {
                return Err(CliError::Usage(format!(
                    "--variant {} but the checkpoint holds a {} network",
                    config.str("variant"),
                    stored.variant
                )));
            }
            stored
        }
        None => net_config(config)?,
    };
    let guide = net.variant.uses_guide().then(|| config.str("guide"));
    let train_set = load_samples(&config.path("train"), guide, norm)?;
    let val_set = match config.opt::<PathBuf>("val")? {
        Some(p) => load_samples(&p, guide, norm)?,
        None => Vec::new(),
    };
    check_disjoint(&train_set, &val_set)?;
    eprintln!("{} training and {} validation frames", train_set.len(), val_set.len());

    let dir = run_dir(config)?;
    let params = match &resume {
        Some(ckpt) => ckpt.params.clone(),
        None => {
            let seed: u64 = config.get("seed")?;
            let epochs: usize = config.get("pretrain-epochs")?;
            if epochs == 0 {
                init_params(&net, &mut ChaCha8Rng::seed_from_u64(seed))?
            } else {
                let pc = PretrainConfig {
                    epochs,
                    base_lr: config.get("pretrain-lr")?,
                    seed,
                    batch_size: tc.batch_size,
                    ..PretrainConfig::default()
                };
                let frames: Vec<_> = train_set.iter().map(|s| (s.frame.clone(), s.gt.clone())).collect();
                let flows: Vec<_> = train_set.iter().map(|s| (s.flow_image.clone(), s.gt.clone())).collect();
                let a = pretrain_appearance(&net.encoder, &frames, &pc)?;
                eprintln!("appearance pretraining losses {:.4?}", a.losses);
                let m = pretrain_motion(&net.encoder, &flows, &pc)?;
                eprintln!("motion pretraining losses {:.4?}", m.losses);
                let mut store = ParamStore::new();
                store.merge(&a.params);
                store.merge(&m.params);
                init_head(&mut store, &net, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed))?;
                store
            }
        }
    };
    let model = Model::new(net, params);
    let outcome = train_model(&model, &train_set, &val_set, &tc, resume.as_ref())?;
    for r in &outcome.curve {
        let val = r.val_j.map_or_else(|| "-".to_string(), |j| format!("{j:.4}"));
        eprintln!("epoch {:>3}  lr {:.2e}  loss {:.5}  val J {val}", r.epoch, r.lr, r.train_loss);
    }
    outcome.best.save(&dir.join("best.ckpt"))?;
    outcome.last.save(&dir.join("last.ckpt"))?;
    write(&dir.join("curve.csv"), &curve_csv(&outcome.curve))?;
    println!("{}", dir.join("best.ckpt").display());
    Ok(())
}

pub fn infer(config: &RunConfig) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&config.path("checkpoint"))?;
    let net = checkpoint_net_config(&ckpt)?;
    if config.is_set("variant") && config.get::<VariantKind>("variant")? != net.variant {
        return Err(CliError::Usage(format!(
            "--variant {} but the checkpoint holds a {} network",
            config.str("variant"),
            net.variant
        )));
    }
    let model = Model::new(net, ckpt.params);
    let norm = flow_norm(config)?;
    let dirs = sequence_dirs(&config.path("input"))?;
    let out = run_dir(config)?.join("masks");
    let guide = config.str("guide").to_string();
    let results = par_map(&dirs, threads(config)?, |dir| -> Result<(String, usize), CliError> {
        let rec = load_sequence(dir)?;
        let masks = model.predict_sequence(&rec, Some(&guide), norm)?;
        save_masks(&out.join(&rec.name), &masks)?;
        Ok((rec.name, masks.len()))
    });
    for r in results {
        let (name, n) = r?;
        println!("{name} {n} masks");
    }
    println!("{}", out.display());
    Ok(())
}

/// Masks of one sequence: `dir/gt` when present (a dataset directory),
/// otherwise the images in `dir` itself.
fn sequence_masks(dir: &Path) -> Result<Vec<BinaryMask>, CliError> {
    let gt = dir.join("gt");
    let masks = load_mask_dir(if gt.is_dir() { &gt } else { dir })?;
    if masks.is_empty() {
        return Err(CliError::Data(format!("{}: no masks", dir.display())));
    }
    Ok(masks)
}

fn subdirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn eval(config: &RunConfig) -> Result<(), CliError> {
    let preds: Vec<PathBuf> = config.list("pred")?;
    if preds.is_empty() {
        return Err(CliError::Usage("--pred needs at least one directory".into()));
    }
    let names: Vec<String> = if config.is_set("names") {
        config.list("names")?
    } else {
        preds
            .iter()
            .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
            .collect()
    };
    if names.len() != preds.len() {
        return Err(CliError::Usage(format!("{} names for {} prediction roots", names.len(), preds.len())));
    }
    let tolerance: Option<f64> = config.opt("tolerance")?;
    let gt_dirs = subdirs(&config.path("gt"))?;
    if gt_dirs.is_empty() {
        return Err(CliError::Data(format!("{}: no ground-truth sequences", config.str("gt"))));
    }
    let workers = threads(config)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for (pred, name) in preds.iter().zip(&names) {
        if subdirs(pred)?.is_empty() {
            return Err(CliError::Data(format!("{}: no predicted sequences", pred.display())));
        }
        let scores = par_map(&gt_dirs, workers, |gt_dir| {
            let seq = gt_dir.file_name().unwrap().to_string_lossy().into_owned();
            let p = sequence_masks(&pred.join(&seq))?;
            let g = sequence_masks(gt_dir)?;
            Ok::<_, CliError>(evaluate_sequence(&seq, &p, &g, tolerance)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        reports.push(evaluate_dataset(name, scores)?);
    }
    let dir = run_dir(config)?;
    let table = format_table(&reports);
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("report.csv"), &format_csv(&reports))?;
    write(&dir.join("sequences.csv"), &format_sequence_csv(&reports))?;
    print!("{table}");
    Ok(())
}

pub fn ablate(config: &RunConfig) -> Result<(), CliError> {
    let size: usize = config.get("size")?;
    let mut spec = SynthSpec {
        n_frames: config.get("frames")?,
        width: size,
        height: size,
        guide_noise: GuideNoise::with_strength(config.get("guide-noise")?),
        ..SynthSpec::default()
    };
    spec.object.min_size = size * 28 / 96;
    spec.object.max_size = size / 2;
    spec.object.distractors = config.get("distractors")?;
    let data_seed: u64 = config.get("data-seed")?;
    let split = |offset: u64, key: &str, tag: &str| -> Result<Vec<Sample>, CliError> {
        let n: u64 = config.get(key)?;
        let mut out = Vec::new();
        for i in 0..n {
            let seed = data_seed.wrapping_mul(100_003).wrapping_add(offset + i);
            let rec = synth_sequence(seed, &format!("{tag}{i:03}"), &spec)?;
            out.extend(samples_from_sequence(&rec, Some(SYNTH_GUIDE), FlowNormalization::PerFrameMax)?);
        }
        Ok(out)
    };
    let train_set = split(1000, "train-sequences", "train")?;
    let val_set = split(1_000_000, "val-sequences", "val")?;
    let test_set = split(2_000_000, "test-sequences", "test")?;

    let ablation = AblationConfig {
        net: NetConfig::scaled(config.get("scale")?),
        pretrain: PretrainConfig {
            epochs: config.get("pretrain-epochs")?,
            base_lr: config.get("pretrain-lr")?,
            batch_size: config.get("batch-size")?,
            ..PretrainConfig::default()
        },
        train: TrainConfig {
            batch_size: config.get("batch-size")?,
            epochs: config.get("epochs")?,
            base_lr: config.get("lr")?,
            lr_policy: lr_policy(config)?,
            augment: augment(config)?,
            ..TrainConfig::default()
        },
        seeds: config.list("seeds")?,
        variants: config.list("variants")?,
        tolerance: config.opt("tolerance")?,
    };
    let dir = run_dir(config)?;
    let report = run_ablation(&train_set, &val_set, &test_set, &ablation)?;
    let table = report.format_table();
    write(&dir.join("ablation.txt"), &table)?;
    write(&dir.join("ablation.csv"), &report.format_csv())?;
    print!("{table}");
    Ok(())
}
