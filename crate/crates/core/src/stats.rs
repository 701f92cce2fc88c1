//! Descriptive statistics, left/right symmetry and the fixation-threshold
//! sensitivity harness.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;
use crate::events::{EventConfig, GazeShift};
use crate::fitting::{fit_participant, FitConfig};
use crate::fpca::eccentricity_grid;
use crate::ingest::Trace;
use crate::models::{ModelKind, ModelParams};
use crate::pipeline::participant_shift_set;

/// Default symmetry bin width, degrees.
pub const SYMMETRY_BIN_WIDTH: f64 = 5.0;
/// Minimum shifts per side for a symmetry bin to count.
pub const SYMMETRY_MIN_COUNT: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("values have zero spread; bandwidth undefined")]
    ZeroSpread,
    #[error("shifts cover only one direction")]
    OneSidedData,
    #[error("only {0} eccentricity bins have data on both sides, need 3")]
    InsufficientBins(usize),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(StatsError::TooFewValues { needed: 3, got: a.len() });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Adjusted Fisher–Pearson skewness; `None` below 3 values or with zero variance.
    pub skewness: Option<f64>,
}

/// Quantile of sorted data by linear interpolation between closest ranks (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe_distribution(values: &[f64]) -> Result<DistributionSummary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::TooFewValues { needed: 1, got: 0 });
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let m = mean(&s);
    let m2 = s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    let m3 = s.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n as f64;
    let skewness = (n >= 3 && m2 > 0.0).then(|| {
        let g1 = m3 / m2.powf(1.5);
        let nf = n as f64;
        g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0)
    });
    Ok(DistributionSummary {
        n,
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[n - 1],
        skewness,
    })
}

/// Silverman's rule-of-thumb bandwidth `1.06 sd n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::ZeroSpread);
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    if var <= 0.0 {
        return Err(StatsError::ZeroSpread);
    }
    Ok(1.06 * var.sqrt() * (values.len() as f64).powf(-0.2))
}

/// Gaussian kernel density of `values` at each of `eval_points`.
pub fn kde_density(values: &[f64], eval_points: &[f64]) -> Result<Vec<f64>, StatsError> {
    let h = silverman_bandwidth(values)?;
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    Ok(eval_points
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub participant_id: String,
    pub mirror_correlation: f64,
    pub normalized_difference: f64,
    pub n_bins: usize,
    pub n_left: usize,
    pub n_right: usize,
}

/// Compares mirrored negative-direction shifts with positive-direction ones.
///
/// Head amplitudes are binned by `|x|`; bins holding at least `min_count`
/// shifts on both sides contribute their per-side means. The report carries
/// the correlation of those means and `mean |L - R| / mean R`.
pub fn symmetry_check(shifts: &[GazeShift], bin_width: f64, min_count: usize) -> Result<SymmetryReport, StatsError> {
    let mut left: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    let mut right: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    let (mut n_left, mut n_right) = (0, 0);
    for s in shifts {
        if s.x == 0.0 {
            continue;
        }
        let bin = (s.x.abs() / bin_width).floor() as i64;
        let (side, y) = if s.x < 0.0 {
            n_left += 1;
            (&mut left, -s.y)
        } else {
            n_right += 1;
            (&mut right, s.y)
        };
        let e = side.entry(bin).or_insert((0.0, 0));
        e.0 += y;
        e.1 += 1;
    }
    if n_left == 0 || n_right == 0 {
        return Err(StatsError::OneSidedData);
    }
    let (mut l, mut r) = (Vec::new(), Vec::new());
    for (bin, &(sum_r, cnt_r)) in &right {
        if let Some(&(sum_l, cnt_l)) = left.get(bin) {
            if cnt_l >= min_count && cnt_r >= min_count {
                l.push(sum_l / cnt_l as f64);
                r.push(sum_r / cnt_r as f64);
            }
        }
    }
    if l.len() < 3 {
        return Err(StatsError::InsufficientBins(l.len()));
    }
    let mirror_correlation = pearson_r(&l, &r)?;
    let diff = l.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum::<f64>() / l.len() as f64;
    let normalized_difference = diff / mean(&r);
    Ok(SymmetryReport {
        participant_id: shifts[0].participant_id.clone(),
        mirror_correlation,
        normalized_difference,
        n_bins: l.len(),
        n_left,
        n_right,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub participant_id: String,
    pub base_threshold: f64,
    pub thresholds: Vec<f64>,
    /// Pearson r between the base-threshold curve and each threshold's curve.
    pub correlations: Vec<f64>,
}

fn soft_hinge_curve(traces: &[Trace], participant_id: &str, event_cfg: &EventConfig, fit_cfg: &FitConfig) -> Result<Vec<f64>> {
    let set = participant_shift_set(participant_id, traces, event_cfg)?;
    let fit = fit_participant(&set, ModelKind::SoftHinge, fit_cfg)?;
    Ok(curve_on_grid(&fit.params))
}

fn curve_on_grid(p: &ModelParams) -> Vec<f64> {
    eccentricity_grid().iter().map(|&x| p.value(x)).collect()
}

/// Reruns detection, extraction and the soft-hinge fit per fixation threshold
/// and correlates each participant's curve with the base-threshold curve on
/// the 0..=50° grid.
pub fn threshold_sensitivity(
    traces: &BTreeMap<String, Vec<Trace>>,
    thresholds: &[f64],
    base: f64,
    event_cfg: &EventConfig,
    fit_cfg: &FitConfig,
) -> Result<Vec<SensitivityRow>> {
    let with_threshold = |t: f64| {
        let mut c = *event_cfg;
        c.detection.threshold_deg_s = t;
        c
    };
    traces
        .par_iter()
        .map(|(pid, ts)| {
            let base_curve = soft_hinge_curve(ts, pid, &with_threshold(base), fit_cfg)?;
            let correlations = thresholds
                .iter()
                .map(|&t| {
                    let curve = soft_hinge_curve(ts, pid, &with_threshold(t), fit_cfg)?;
                    Ok(pearson_r(&base_curve, &curve)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(SensitivityRow {
                participant_id: pid.clone(),
                base_threshold: base,
                thresholds: thresholds.to_vec(),
                correlations,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_exact_lines() {
        let a = [1.0, 2.0, 4.0, 7.0];
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson_r(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson_r(&a, &c).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(3, 2)));
        assert_eq!(pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::ZeroVariance));
        assert!(matches!(pearson_r(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFewValues { .. })));
    }

    #[test]
    fn quartiles_of_one_to_four() {
        let d = describe_distribution(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((d.q1, d.median, d.q3), (1.75, 2.5, 3.25));
        assert_eq!((d.min, d.max, d.n), (1.0, 4.0, 4));
    }

    #[test]
    fn symmetric_sample_has_no_skew() {
        let d = describe_distribution(&[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(d.median, 0.0);
        assert!(d.skewness.unwrap().abs() < 1e-15);
        let skewed = describe_distribution(&[0.0, 0.0, 0.0, 1.0, 10.0]).unwrap();
        assert!(skewed.skewness.unwrap() > 0.0);
        assert_eq!(describe_distribution(&[3.0]).unwrap().skewness, None);
    }

    #[test]
    fn kde_shape() {
        let vals = [-0.3, -0.1, 0.0, 0.1, 0.3];
        let pts: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let d = kde_density(&vals, &pts).unwrap();
        let imax = d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(pts[imax], 0.0);

        let pair = kde_density(&[-1.0, 1.0], &[-0.7, 0.7, -2.0, 2.0]).unwrap();
        assert!((pair[0] - pair[1]).abs() < 1e-12 && (pair[2] - pair[3]).abs() < 1e-12);
        assert_eq!(kde_density(&[2.0, 2.0], &[0.0]), Err(StatsError::ZeroSpread));
    }

    fn shift(x: f64, y: f64) -> GazeShift {
        GazeShift::new("p", "t", x, y)
    }

    #[test]
    fn mirror_symmetric_data() {
        let mut v = Vec::new();
        for i in 0..60 {
            let x = 1.0 + (i as f64 * 0.8) % 48.0;
            let y = 0.4 * x;
            v.push(shift(x, y));
            v.push(shift(-x, -y));
        }
        let r = symmetry_check(&v, SYMMETRY_BIN_WIDTH, SYMMETRY_MIN_COUNT).unwrap();
        assert!((r.mirror_correlation - 1.0).abs() < 1e-12);
        assert!(r.normalized_difference.abs() < 1e-12);
        let only_right: Vec<_> = v.iter().filter(|s| s.x > 0.0).cloned().collect();
        assert_eq!(symmetry_check(&only_right, 5.0, 3), Err(StatsError::OneSidedData));
    }
}
