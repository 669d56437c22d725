//! Normalized mean error and the cumulative error distribution summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{distance, LandmarkSet, Point, OUTER_CORNERS};

pub const DEFAULT_THRESHOLD: f64 = 0.05;

/// Mean point error over `iod`; `None` when `iod` is not positive.
pub fn nme_points(gt: &[Point], pr: &[Point], iod: f64) -> Option<f64> {
    if !(iod > 0.0) || gt.is_empty() || gt.len() != pr.len() {
        return None;
    }
    let total: f64 = gt.iter().zip(pr).map(|(a, b)| distance(*a, *b)).sum();
    Some(total / gt.len() as f64 / iod)
}

/// NME normalized by the ground-truth outer-corner distance. `None` flags a
/// degenerate annotation whose corners coincide.
pub fn nme(gt: &LandmarkSet, pr: &LandmarkSet) -> Option<f64> {
    let (a, b) = OUTER_CORNERS;
    nme_points(&gt.points, &pr.points, distance(gt.points[a], gt.points[b]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub excluded: usize,
    pub threshold: f64,
    pub nme_mean: f64,
    pub auc_0_05: f64,
    pub fr_0_05: f64,
    /// Vertices `[t, fraction ≤ t]` of the step curve on `[0, threshold]`.
    /// Each jump appears as two vertices at the same `t`.
    pub ced: Vec<[f64; 2]>,
    #[serde(skip)]
    pub nmes: Vec<f64>,
}

impl EvalReport {
    /// Fraction of samples with NME ≤ `t`.
    pub fn ced_at(&self, t: f64) -> f64 {
        ced_fraction(&self.nmes, t)
    }
}

fn ced_fraction(nmes: &[f64], t: f64) -> f64 {
    nmes.iter().filter(|v| **v <= t).count() as f64 / nmes.len() as f64
}

/// Builds the report from per-sample NMEs. AUC is the exact area under the
/// empirical step curve on `[0, threshold]` divided by `threshold`, computed
/// as a trapezoid sum over the curve's vertices.
pub fn ced_auc_fr(nmes: &[f64], threshold: f64, excluded: usize) -> Result<EvalReport> {
    if nmes.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    if let Some(v) = nmes.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("invalid NME value {v}")));
    }
    let n = nmes.len() as f64;
    let mut sorted = nmes.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut ced = Vec::new();
    let mut below = sorted.iter().take_while(|v| **v <= 0.0).count();
    ced.push([0.0, below as f64 / n]);
    let mut i = below;
    while i < sorted.len() && sorted[i] <= threshold {
        let t = sorted[i];
        let before = below as f64 / n;
        while i < sorted.len() && sorted[i] == t {
            i += 1;
        }
        below = i;
        ced.push([t, before]);
        ced.push([t, below as f64 / n]);
    }
    let last = ced.last().expect("nonempty")[1];
    if ced.last().expect("nonempty")[0] < threshold {
        ced.push([threshold, last]);
    }

    let area: f64 = ced
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]) * (w[0][1] + w[1][1]) / 2.0)
        .sum();
    let failures = nmes.iter().filter(|v| **v > threshold).count();
    Ok(EvalReport {
        n: nmes.len(),
        excluded,
        threshold,
        nme_mean: nmes.iter().sum::<f64>() / n,
        auc_0_05: area / threshold,
        fr_0_05: failures as f64 / n,
        ced,
        nmes: nmes.to_vec(),
    })
}

/// Scores prediction/ground-truth pairs, excluding degenerate annotations.
pub fn evaluate(pairs: &[(LandmarkSet, LandmarkSet)], threshold: f64) -> Result<EvalReport> {
    let mut nmes = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for (gt, pr) in pairs {
        match nme(gt, pr) {
            Some(v) => nmes.push(v),
            None => excluded += 1,
        }
    }
    if nmes.is_empty() && excluded > 0 {
        return Err(Error::InvalidArgument(format!(
            "all {excluded} samples have zero inter-ocular distance"
        )));
    }
    ced_auc_fr(&nmes, threshold, excluded)
}
