//! Region similarity `J`, contour accuracy `F`, temporal stability `T`, and
//! their aggregation from frames to sequences to a dataset.

mod boundary;
mod report;

pub use boundary::{boundary_f, contour, default_tolerance, squared_distance_transform};
pub use report::{evaluate_dataset, format_csv, format_sequence_csv, format_table, EvalReport, Stat};

use crate::data::BinaryMask;
use crate::error::{Error, Result};

fn same_dims(a: &BinaryMask, b: &BinaryMask, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// Intersection over union. Two empty masks agree perfectly (1.0).
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    same_dims(pred, gt, "jaccard")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Shape instability between consecutive masks, lower is better.
///
/// Each mask is translated (by the rounded centroid difference) onto its
/// successor before taking `1 − J`, so rigid motion scores zero and only
/// changes of shape count. Pairs of empty masks score 0 and a pair with one
/// empty mask scores 1.
pub fn temporal_stability(masks: &[BinaryMask]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::invalid("temporal_stability", "needs at least two masks"));
    }
    let mut total = 0.0;
    for pair in masks.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        same_dims(a, b, "temporal_stability")?;
        total += match (a.centroid(), b.centroid()) {
            (None, None) => 0.0,
            (Some(ca), Some(cb)) => {
                let dx = (cb.0 - ca.0).round() as isize;
                let dy = (cb.1 - ca.1).round() as isize;
                1.0 - jaccard(&a.translated(dx, dy), b)?
            }
            _ => 1.0,
        };
    }
    Ok(total / (masks.len() - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameScores {
    pub j: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceScores {
    pub name: String,
    pub frames: Vec<FrameScores>,
    pub j_mean: f64,
    pub f_mean: f64,
    /// Absent for single-frame sequences.
    pub t: Option<f64>,
}

/// Per-frame `J` and `F` averaged over the sequence, plus `T` of the predictions.
///
/// `tolerance` is the contour tolerance in pixels; `None` uses
/// [`default_tolerance`] for the frame size.
pub fn evaluate_sequence(
    name: &str,
    pred: &[BinaryMask],
    gt: &[BinaryMask],
    tolerance: Option<f64>,
) -> Result<SequenceScores> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!(
            "{name}: {} predicted masks for {} ground-truth masks",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data(format!("{name}: no masks to evaluate")));
    }
    let frames = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let tol = tolerance.unwrap_or_else(|| default_tolerance(g.width(), g.height()));
            Ok(FrameScores {
                j: jaccard(p, g)?,
                f: boundary_f(p, g, tol)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len() as f64;
    let t = if pred.len() >= 2 {
        Some(temporal_stability(pred)?)
    } else {
        None
    };
    Ok(SequenceScores {
        name: name.to_string(),
        j_mean: frames.iter().map(|s| s.j).sum::<f64>() / n,
        f_mean: frames.iter().map(|s| s.f).sum::<f64>() / n,
        frames,
        t,
    })
}
