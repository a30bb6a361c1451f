//! Uniformity of a set of transforms over their bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{TransformBounds, TransformParams};

/// KL divergence of a histogram of `samples` on `[lo, hi]` from the uniform
/// distribution. With `smoothing`, every bin starts with one count.
pub fn histogram_kl(samples: &[f64], lo: f64, hi: f64, bins: usize, smoothing: bool) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("histogram_kl needs samples"));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if hi <= lo {
        return Ok(0.0);
    }
    let mut counts = vec![if smoothing { 1.0 } else { 0.0 }; bins];
    for &x in samples {
        let u = ((x - lo) / (hi - lo) * bins as f64).floor();
        let b = (u.max(0.0) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let q = 1.0 / bins as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            p * (p / q).ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Kolmogorov–Smirnov statistic of `samples` against `U[lo, hi]`.
pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("ks_uniform needs samples"));
    }
    if hi <= lo {
        return Ok(0.0);
    }
    let mut xs: Vec<f64> = samples.iter().map(|x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).max((i + 1) as f64 / n - f))
        .fold(0.0, f64::max))
}

fn column(transforms: &[TransformParams], bounds: &TransformBounds, i: usize) -> Result<Vec<f64>> {
    transforms
        .iter()
        .map(|t| {
            if t.dim() != bounds.dim() {
                return Err(Error::DimensionMismatch {
                    expected: bounds.dim(),
                    actual: t.dim(),
                });
            }
            Ok(t.values()[i])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub samples: usize,
    pub bins: usize,
    pub kl_per_dim: Vec<f64>,
    pub ks_per_dim: Vec<f64>,
    pub kl: f64,
    pub diversity: f64,
}

/// Per-dimension smoothed histogram KL and KS statistics.
pub fn diversity_report(
    transforms: &[TransformParams],
    bounds: &TransformBounds,
    bins: usize,
) -> Result<DiversityReport> {
    if transforms.is_empty() {
        return Err(Error::Empty("diversity needs at least one transform"));
    }
    let mut kl_per_dim = Vec::with_capacity(bounds.dim());
    let mut ks_per_dim = Vec::with_capacity(bounds.dim());
    for i in 0..bounds.dim() {
        let col = column(transforms, bounds, i)?;
        let (lo, hi) = (bounds.lower()[i], bounds.upper()[i]);
        kl_per_dim.push(histogram_kl(&col, lo, hi, bins, true)?);
        ks_per_dim.push(ks_uniform(&col, lo, hi)?);
    }
    let kl: f64 = kl_per_dim.iter().sum();
    Ok(DiversityReport {
        samples: transforms.len(),
        bins,
        kl_per_dim,
        ks_per_dim,
        kl,
        diversity: (-kl).exp(),
    })
}

/// Summed per-dimension KL from uniform and `diversity = e^(−KL)`.
pub fn diversity_kl(transforms: &[TransformParams], bounds: &TransformBounds, bins: usize) -> Result<(f64, f64)> {
    let r = diversity_report(transforms, bounds, bins)?;
    Ok((r.kl, r.diversity))
}
