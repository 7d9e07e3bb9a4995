use std::fmt::Write;

use super::SequenceScores;
use crate::error::{Error, Result};

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt() })
    }
}

/// One table row: an algorithm's scores over a set of sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub algorithm: String,
    pub sequences: Vec<SequenceScores>,
    pub j: Stat,
    pub f: Stat,
    /// Over sequences that have a `T` value.
    pub t: Option<Stat>,
}

/// Dataset statistics are taken over sequence-level means.
pub fn evaluate_dataset(algorithm: &str, sequences: Vec<SequenceScores>) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::Data(format!("{algorithm}: no sequences to aggregate")));
    }
    let j: Vec<f64> = sequences.iter().map(|s| s.j_mean).collect();
    let f: Vec<f64> = sequences.iter().map(|s| s.f_mean).collect();
    let t: Vec<f64> = sequences.iter().filter_map(|s| s.t).collect();
    Ok(EvalReport {
        algorithm: algorithm.to_string(),
        j: Stat::of(&j).unwrap(),
        f: Stat::of(&f).unwrap(),
        t: Stat::of(&t),
        sequences,
    })
}

fn cells(r: &EvalReport) -> [String; 6] {
    let fmt = |s: Option<Stat>| match s {
        Some(s) => [format!("{:.4}", s.mean), format!("{:.4}", s.std)],
        None => ["-".to_string(), "-".to_string()],
    };
    let [jm, js] = fmt(Some(r.j));
    let [fm, fs] = fmt(Some(r.f));
    let [tm, ts] = fmt(r.t);
    [jm, js, fm, fs, tm, ts]
}

/// Aligned text table with `J(↑)`, `F(↑)` and `T(↓)` mean/std column pairs.
pub fn format_table(reports: &[EvalReport]) -> String {
    let name_width = reports
        .iter()
        .map(|r| r.algorithm.chars().count())
        .chain(std::iter::once("Algorithm".len()))
        .max()
        .unwrap();
    let mut out = String::new();
    let rule = format!("{}\n", "-".repeat(name_width + 2 + 6 * 9));
    writeln!(
        out,
        "{:<name_width$}  {:^17} {:^17} {:^17}",
        "", "J (higher better)", "F (higher better)", "T (lower better)"
    )
    .unwrap();
    writeln!(
        out,
        "{:<name_width$}  {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "Algorithm", "mean", "std", "mean", "std", "mean", "std"
    )
    .unwrap();
    out.push_str(&rule);
    for r in reports {
        let c = cells(r);
        writeln!(
            out,
            "{:<name_width$}  {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            r.algorithm, c[0], c[1], c[2], c[3], c[4], c[5]
        )
        .unwrap();
    }
    out
}

pub fn format_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("algorithm,j_mean,j_std,f_mean,f_std,t_mean,t_std\n");
    for r in reports {
        let c = cells(r).map(|v| if v == "-" { String::new() } else { v });
        writeln!(out, "{},{}", r.algorithm, c.join(",")).unwrap();
    }
    out
}

pub fn format_sequence_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("algorithm,sequence,j_mean,f_mean,t\n");
    for r in reports {
        for s in &r.sequences {
            let t = s.t.map(|t| format!("{t:.6}")).unwrap_or_default();
            writeln!(out, "{},{},{:.6},{:.6},{}", r.algorithm, s.name, s.j_mean, s.f_mean, t).unwrap();
        }
    }
    out
}
