//! Per-layer norm statistics, the two norm-criterion requirement checks, and
//! a Gaussian kernel density estimate of the norm distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{filter_norm, NormKind};
use crate::filters::FilterMatrix;

pub const DEFAULT_DEVIATION_THRESHOLD: f64 = 0.25;
pub const DEFAULT_MINIMUM_THRESHOLD: f64 = 0.3;
pub const DEFAULT_GRID_POINTS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("EmptyInput: density estimation needs at least one sample")]
    EmptyInput,
    #[error("InvalidGrid: need at least 2 grid points, got {0}")]
    InvalidGrid(usize),
    #[error("InvalidBandwidth: bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("NonFiniteValue: sample {0} is not finite")]
    NonFinite(usize),
}

impl AnalysisError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EmptyInput => "EmptyInput",
            Self::InvalidGrid(_) => "InvalidGrid",
            Self::InvalidBandwidth(_) => "InvalidBandwidth",
            Self::NonFinite(_) => "NonFiniteValue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub layer: String,
    pub norms: Vec<f64>,
    /// Smallest norm.
    pub v1: f64,
    /// Largest norm.
    pub v2: f64,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator, zero for one filter).
    pub std: f64,
    pub span: f64,
}

impl NormStats {
    /// Panics on an empty norm vector; every layer has at least one filter.
    pub fn from_norms(layer: &str, norms: Vec<f64>) -> Self {
        assert!(!norms.is_empty(), "norm statistics need at least one filter");
        let (mut v1, mut v2) = (f64::INFINITY, f64::NEG_INFINITY);
        // Welford's update keeps the mean exact for constant inputs.
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (k, &x) in norms.iter().enumerate() {
            v1 = v1.min(x);
            v2 = v2.max(x);
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        let n = norms.len();
        let std = if n > 1 {
            (m2.max(0.0) / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            layer: layer.to_string(),
            norms,
            v1,
            v2,
            mean: mean.clamp(v1, v2),
            std,
            span: v2 - v1,
        }
    }
}

pub fn compute_norm_stats(layer: &str, m: &FilterMatrix, p: NormKind) -> NormStats {
    NormStats::from_norms(layer, filter_norm(m, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementReport {
    pub layer: String,
    /// `std / mean < deviation_threshold`: norms bunched in a narrow band.
    pub small_deviation: bool,
    /// `v1 / v2 > minimum_threshold`: no filter is near zero.
    pub large_minimum: bool,
    pub deviation_ratio: f64,
    pub minimum_ratio: f64,
}

/// Flags are strict comparisons, so a ratio exactly at its threshold is not
/// flagged.
pub fn check_requirements(stats: &NormStats, deviation_threshold: f64, minimum_threshold: f64) -> RequirementReport {
    let deviation_ratio = if stats.mean == 0.0 { 0.0 } else { stats.std / stats.mean };
    let minimum_ratio = if stats.v2 == 0.0 { 0.0 } else { stats.v1 / stats.v2 };
    RequirementReport {
        layer: stats.layer.clone(),
        small_deviation: deviation_ratio < deviation_threshold,
        large_minimum: minimum_ratio > minimum_threshold,
        deviation_ratio,
        minimum_ratio,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, `0.9 * min(std, IQR / 1.34) * n^(-1/5)`.
///
/// A zero spread measure is skipped in favour of the other; when both are
/// zero the bandwidth falls back to `1e-3 * (1 + |mean|)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let stats = NormStats::from_norms("", samples.to_vec());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = [stats.std, iqr / 1.34]
        .into_iter()
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    if spread.is_finite() {
        0.9 * spread * (samples.len() as f64).powf(-0.2)
    } else {
        1e-3 * (1.0 + stats.mean.abs())
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian KDE evaluated at a single point.
pub fn kde_density_at(samples: &[f64], bandwidth: f64, x: f64) -> f64 {
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let u = (x - s) / bandwidth;
            (-0.5 * u * u).exp()
        })
        .sum();
    INV_SQRT_2PI * sum / (samples.len() as f64 * bandwidth)
}

/// Gaussian KDE on `grid_points` evenly spaced points over
/// `[min - 3h, max + 3h]`.
pub fn kde_estimate(samples: &[f64], grid_points: usize, bandwidth: Option<f64>) -> Result<KdeCurve, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if grid_points < 2 {
        return Err(AnalysisError::InvalidGrid(grid_points));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite(i));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(AnalysisError::InvalidBandwidth(h)),
        None => silverman_bandwidth(samples),
    };
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let last = (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|k| lo + (hi - lo) * k as f64 / last).collect();
    let density = grid.iter().map(|&x| kde_density_at(samples, h, x)).collect();
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_one_two_three() {
        let s = NormStats::from_norms("l", vec![1.0, 2.0, 3.0]);
        assert_eq!((s.v1, s.v2, s.mean, s.std, s.span), (1.0, 3.0, 2.0, 1.0, 2.0));
    }

    #[test]
    fn single_filter_stats() {
        let m = FilterMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let s = compute_norm_stats("one", &m, NormKind::L2);
        assert_eq!((s.std, s.span, s.mean), (0.0, 0.0, 5.0));
    }

    #[test]
    fn constant_norms_keep_mean_inside_range() {
        let s = NormStats::from_norms("c", vec![0.1; 37]);
        assert_eq!(s.mean, 0.1);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn requirement_flags() {
        let equal = check_requirements(&NormStats::from_norms("a", vec![0.9; 8]), 0.25, 0.3);
        assert!(equal.small_deviation && equal.large_minimum);
        assert_eq!((equal.deviation_ratio, equal.minimum_ratio), (0.0, 1.0));

        let tiny_min = check_requirements(&NormStats::from_norms("b", vec![1e-6, 1.0]), 0.25, 0.3);
        assert_eq!(tiny_min.minimum_ratio, 1e-6);
        assert!(!tiny_min.large_minimum);

        let zeros = check_requirements(&NormStats::from_norms("z", vec![0.0, 0.0]), 0.25, 0.3);
        assert_eq!((zeros.deviation_ratio, zeros.minimum_ratio), (0.0, 0.0));
    }

    #[test]
    fn thresholds_are_strict() {
        // v1/v2 is exactly 0.5; the deviation ratio is compared against itself.
        let stats = NormStats::from_norms("s", vec![1.0, 2.0]);
        let r = check_requirements(&stats, 0.5, 0.5);
        assert_eq!(r.minimum_ratio, 0.5);
        assert!(!r.large_minimum);
        let r = check_requirements(&stats, r.deviation_ratio, 0.4);
        assert!(!r.small_deviation);
        assert!(r.large_minimum);
    }

    #[test]
    fn single_sample_density_peak() {
        let curve = kde_estimate(&[0.0], 257, Some(1.0)).unwrap();
        assert_eq!(curve.grid[128], 0.0);
        let expected = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((curve.density[128] - expected).abs() < 1e-12);
        assert_eq!((curve.grid[0], curve.grid[256]), (-3.0, 3.0));
    }

    #[test]
    fn two_symmetric_samples() {
        let curve = kde_estimate(&[-1.0, 1.0], 101, Some(1.0)).unwrap();
        let n = curve.density.len();
        for k in 0..n {
            assert!((curve.density[k] - curve.density[n - 1 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_errors() {
        assert_eq!(kde_estimate(&[], 10, None), Err(AnalysisError::EmptyInput));
        assert_eq!(kde_estimate(&[1.0], 1, None), Err(AnalysisError::InvalidGrid(1)));
        assert_eq!(
            kde_estimate(&[1.0], 10, Some(0.0)),
            Err(AnalysisError::InvalidBandwidth(0.0))
        );
    }

    #[test]
    fn silverman_fallbacks() {
        assert_eq!(silverman_bandwidth(&[2.0]), 1e-3 * 3.0);
        // IQR is zero here but the standard deviation is not.
        let h = silverman_bandwidth(&[1.0, 1.0, 1.0, 1.0, 1.0, 5.0]);
        assert!(h > 0.0);
    }

    #[test]
    fn silverman_matches_hand_value() {
        // std = 1, IQR of 1..3 = 1 -> min(1, 1/1.34) = 0.746..., n = 3.
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0]);
        let expected = 0.9 * (1.0 / 1.34) * 3f64.powf(-0.2);
        assert!((h - expected).abs() < 1e-15);
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.25), 1.75);
        assert_eq!(quantile_sorted(&x, 0.75), 3.25);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
    }
}
