//! Training runs shared by the integration tests and the acceptance suite.

use std::time::{Duration, Instant};

use guidevos::data::{synth_sequence, FlowNormalization};
use guidevos::encoders::PretrainConfig;
use guidevos::net::{init_params, Model, NetConfig};
use guidevos::train::{
    evaluate_model, run_ablation, samples_from_sequence, train, AblationConfig, AblationReport, AugmentConfig,
    LrPolicy, TrainConfig,
};

use super::{rng, synth_samples, synth_spec};

pub struct Overfit {
    pub train_j: f64,
    pub iterations: usize,
    pub elapsed: Duration,
}

/// Four 64×64 frames of one sequence, one batch of four, 200 iterations.
pub fn overfit(freeze_encoders: bool) -> Overfit {
    let mut spec = synth_spec(64, 0, 1.0);
    spec.n_frames = 4;
    spec.object.min_size = 32;
    spec.object.max_size = 48;
    let rec = synth_sequence(1, "overfit", &spec).unwrap();
    let samples = samples_from_sequence(&rec, Some("synth"), FlowNormalization::PerFrameMax).unwrap();
    let config = NetConfig::desk();
    let model = Model::new(config.clone(), init_params(&config, &mut rng(0)).unwrap());
    let tc = TrainConfig {
        batch_size: 4,
        epochs: 200,
        base_lr: 0.05,
        lr_policy: LrPolicy::Poly { power: 0.9 },
        augment: AugmentConfig::none(),
        freeze_encoders,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&model, &samples, &[], &tc, None).unwrap();
    let trained = Model::new(config, outcome.last.params);
    let scores = evaluate_model(&trained, &samples, None).unwrap();
    Overfit {
        train_j: scores[0].j_mean,
        iterations: outcome.curve.len(),
        elapsed: start.elapsed(),
    }
}

/// Overfitting all parameters, encoders included.
pub fn default_overfit() -> Overfit {
    overfit(false)
}

pub struct Ablation {
    pub report: AblationReport,
    pub test_sequences: usize,
    pub elapsed: Duration,
}

/// Guided against both baselines on 96×96 sequences with two unannotated
/// distractors, three seeds.
pub fn guided_vs_baselines() -> Ablation {
    let spec = synth_spec(96, 2, 0.8);
    let train_set = synth_samples(1000, 128, &spec, "train");
    let val_set = synth_samples(2000, 4, &spec, "val");
    let test_sequences = 10;
    let test_set = synth_samples(3000, test_sequences, &spec, "test");
    let config = AblationConfig {
        net: NetConfig::desk(),
        pretrain: PretrainConfig {
            epochs: 4,
            ..PretrainConfig::default()
        },
        train: TrainConfig {
            epochs: 20,
            base_lr: 0.05,
            lr_policy: LrPolicy::Poly { power: 0.9 },
            augment: AugmentConfig::none(),
            ..TrainConfig::default()
        },
        seeds: vec![0, 1, 2],
        ..AblationConfig::default()
    };
    let start = Instant::now();
    let report = run_ablation(&train_set, &val_set, &test_set, &config).unwrap();
    Ablation {
        report,
        test_sequences,
        elapsed: start.elapsed(),
    }
}
