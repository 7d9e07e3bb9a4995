use std::collections::BTreeMap;
use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, train, Sample, TrainConfig};
use crate::encoders::{pretrain_appearance, pretrain_motion, PretrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, evaluate_sequence, EvalReport, SequenceScores, Stat};
use crate::net::{init_head, Model, NetConfig, VariantKind};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Architecture shared by all variants; its `variant` field is overridden.
    pub net: NetConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantKind>,
    /// Contour tolerance; `None` uses the frame-size default.
    pub tolerance: Option<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            net: NetConfig::desk(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            variants: VariantKind::ALL.to_vec(),
            tolerance: None,
        }
    }
}

/// One method across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub per_seed: Vec<EvalReport>,
    /// Of the dataset mean `J` across seeds.
    pub j: Stat,
    pub f: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    /// The raw guide masks first, then one row per variant.
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
}

pub const GUIDE_ROW: &str = "guide";

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Method, then mean and across-seed std of the dataset `J` and `F`.
    pub fn format_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        writeln!(out, "{:<width$}  {:>8} {:>8} {:>8} {:>8}", "method", "J", "J std", "F", "F std").unwrap();
        writeln!(out, "{}", "-".repeat(width + 2 + 4 * 9)).unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<width$}  {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.name, r.j.mean, r.j.std, r.f.mean, r.f.std
            )
            .unwrap();
        }
        out
    }

    /// `method,seed,j_mean,j_std,f_mean,f_std` rows.
    pub fn format_csv(&self) -> String {
        let mut out = String::from("method,seed,j_mean,j_std,f_mean,f_std\n");
        for r in &self.rows {
            for (rep, seed) in r.per_seed.iter().zip(&self.seeds) {
                writeln!(
                    out,
                    "{},{seed},{:.6},{:.6},{:.6},{:.6}",
                    r.name, rep.j.mean, rep.j.std, rep.f.mean, rep.f.std
                )
                .unwrap();
            }
        }
        out
    }
}

fn guide_scores(samples: &[Sample], tolerance: Option<f64>) -> Result<Vec<SequenceScores>> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<&str, (Vec<_>, Vec<_>)> = BTreeMap::new();
    for s in samples {
        let e = groups.entry(&s.sequence).or_insert_with(|| {
            order.push(s.sequence.as_str());
            (Vec::new(), Vec::new())
        });
        e.0.push(s.guide.clone());
        e.1.push(s.gt.clone());
    }
    order
        .iter()
        .map(|n| evaluate_sequence(n, &groups[n].0, &groups[n].1, tolerance))
        .collect()
}

fn row(name: &str, per_seed: Vec<EvalReport>) -> AblationRow {
    let j: Vec<f64> = per_seed.iter().map(|r| r.j.mean).collect();
    let f: Vec<f64> = per_seed.iter().map(|r| r.f.mean).collect();
    AblationRow {
        name: name.to_string(),
        j: Stat::of(&j).unwrap(),
        f: Stat::of(&f).unwrap(),
        per_seed,
    }
}

/// Pretrains both encoders per seed, trains every variant on top of the same
/// encoders, and evaluates all of them and the raw guides on `test_set`.
pub fn run_ablation(
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    config: &AblationConfig,
) -> Result<AblationReport> {
    if config.seeds.is_empty() || config.variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    if test_set.is_empty() {
        return Err(Error::Data("ablation: empty test set".into()));
    }
    let guide = evaluate_dataset(GUIDE_ROW, guide_scores(test_set, config.tolerance)?)?;
    let mut per_variant: Vec<Vec<EvalReport>> = vec![Vec::new(); config.variants.len()];
    for &seed in &config.seeds {
        let pretrain = PretrainConfig {
            seed,
            ..config.pretrain.clone()
        };
        let motion_set: Vec<_> = train_set.iter().map(|s| (s.flow_image.clone(), s.gt.clone())).collect();
        let appearance_set: Vec<_> = train_set.iter().map(|s| (s.frame.clone(), s.gt.clone())).collect();
        let mut encoders = ParamStore::new();
        encoders.merge(&pretrain_appearance(&config.net.encoder, &appearance_set, &pretrain)?.params);
        encoders.merge(&pretrain_motion(&config.net.encoder, &motion_set, &pretrain)?.params);

        for (k, &variant) in config.variants.iter().enumerate() {
            let net = config.net.clone().with_variant(variant);
            let mut params = encoders.clone();
            init_head(&mut params, &net, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed))?;
            let model = Model::new(net, params);
            let train_config = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let outcome = train(&model, train_set, val_set, &train_config, None)?;
            let trained = Model::new(model.config, outcome.best.params);
            let scores = evaluate_model(&trained, test_set, config.tolerance)?;
            per_variant[k].push(evaluate_dataset(&variant.to_string(), scores)?);
        }
    }
    let mut rows = vec![row(GUIDE_ROW, vec![guide; config.seeds.len()])];
    for (variant, reports) in config.variants.iter().zip(per_variant) {
        rows.push(row(&variant.to_string(), reports));
    }
    Ok(AblationReport {
        rows,
        seeds: config.seeds.clone(),
    })
}
