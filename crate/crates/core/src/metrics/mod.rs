//! Percentage error, the no-reference quality score and report aggregation.

mod niqe;
pub mod special;

use serde::{Deserialize, Serialize};

pub use niqe::{
    fit_aggd, fit_ggd, fit_mvg, fit_mvg_relaxed, gaussian_window, mscn, niqe_features, niqe_images, niqe_score,
    patch_features, read_model, write_model, AggdFit, GgdFit, MvgModel, NiqeConfig, PatchSelection,
    FEATURES_PER_SCALE, MODEL_DEVIATIONS,
};

use crate::error::{Error, Result};

/// `100 * sum|out - ref| / sum|ref|` over the foreground.
pub fn percentage_error(out: &[f64], reference: &[f64], mask: &[bool]) -> Result<f64> {
    if out.len() != reference.len() || mask.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "percentage error inputs differ in size: {}, {}, mask {}",
            out.len(),
            reference.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("foreground mask is empty".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((o, r), _) in out.iter().zip(reference).zip(mask).filter(|(_, &m)| m) {
        num += (o - r).abs();
        den += r.abs();
    }
    if den == 0.0 {
        return Err(Error::Degenerate("reference has zero energy on the foreground".into()));
    }
    Ok(100.0 * num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub mean_before: f64,
    pub mean_after: f64,
    pub mean_improvement: f64,
    /// Per-row `100 * (before - after) / before`.
    pub rows: Vec<f64>,
}

pub fn aggregate_improvement(before: &[f64], after: &[f64]) -> Result<Improvement> {
    if before.is_empty() || before.len() != after.len() {
        return Err(Error::Dimension(format!(
            "need equal nonempty score lists, got {} and {}",
            before.len(),
            after.len()
        )));
    }
    if before.contains(&0.0) {
        return Err(Error::Degenerate("a 'before' score is zero".into()));
    }
    let rows: Vec<f64> = before.iter().zip(after).map(|(b, a)| 100.0 * (b - a) / b).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Improvement {
        mean_before: mean(before),
        mean_after: mean(after),
        mean_improvement: mean(&rows),
        rows,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Dimension("rank correlation needs two equal lists of length >= 2".into()));
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, sa) = mean_std(&ra);
    let (mb, sb) = mean_std(&rb);
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::Degenerate("constant input to rank correlation".into()));
    }
    let cov = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / ra.len() as f64;
    Ok(cov / (sa * sb))
}
