//! Functional PCA over soft-hinge curves sampled on a common eccentricity grid.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelParams, SoftHingeParams};

/// Grid points per curve: 0..=50° in 1° steps.
pub const GRID_LEN: usize = 51;

pub const SIGN_CONVENTION: &str = "nonnegative-grid-mean-loading";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpcaError {
    #[error("need at least 2 curves, got {0}")]
    TooFewCurves(usize),
    #[error("requested {requested} components but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },
    #[error("curve has {got} values, the spectrum grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("component {index} is not retained ({retained} components)")]
    IndexOutOfRange { index: usize, retained: usize },
    #[error("reference score set is empty")]
    EmptyReference,
    #[error("curve {0} contains non-finite values")]
    NonFinite(String),
}

pub fn eccentricity_grid() -> Vec<f64> {
    (0..GRID_LEN).map(|i| i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveGrid {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub curve_ids: Vec<String>,
}

impl CurveGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stacks two grids, e.g. the same participants under two tasks.
    pub fn concat(mut self, other: CurveGrid) -> Result<CurveGrid, FpcaError> {
        if other.grid != self.grid {
            return Err(FpcaError::GridMismatch { expected: self.grid.len(), got: other.grid.len() });
        }
        self.values.extend(other.values);
        self.curve_ids.extend(other.curve_ids);
        Ok(self)
    }
}

/// Evaluates each soft hinge on the 0..=50° grid.
pub fn sample_curves<S: AsRef<str>>(fits: &[(S, SoftHingeParams)]) -> CurveGrid {
    let grid = eccentricity_grid();
    let values = fits
        .iter()
        .map(|(_, p)| {
            let mp = ModelParams::from(*p);
            grid.iter().map(|&x| mp.value(x)).collect()
        })
        .collect();
    CurveGrid {
        grid,
        values,
        curve_ids: fits.iter().map(|(id, _)| id.as_ref().to_string()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumModel {
    pub grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    /// Retained components, each of grid length, orthonormal.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub sign_convention: String,
    /// Sum of all covariance eigenvalues (the trace), retained or not.
    pub total_variance: f64,
    pub curve_ids: Vec<String>,
    /// Training-curve scores, `n_curves x n_components`.
    pub scores: Vec<Vec<f64>>,
}

impl SpectrumModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Training scores on one component.
    pub fn component_scores(&self, component: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[component]).collect()
    }

    fn scores_of(&self, curve: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|phi| phi.iter().zip(curve).zip(&self.mean_curve).map(|((p, c), m)| p * (c - m)).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumScore {
    pub curve_id: String,
    pub pc_scores: Vec<f64>,
    pub percentile_pc1: f64,
}

/// Orients `v` so its mean is nonnegative; an exactly balanced vector is
/// oriented by its largest-magnitude entry instead.
fn orient(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let flip = if mean.abs() > 1e-12 {
        mean < 0.0
    } else {
        v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).is_some_and(|m| m < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Centers the curves pointwise, eigendecomposes their sample covariance
/// (divisor `n - 1`) and keeps the leading `n_components` eigenvectors.
pub fn fit_fpca(curves: &CurveGrid, n_components: usize) -> Result<SpectrumModel, FpcaError> {
    let n = curves.len();
    if n < 2 {
        return Err(FpcaError::TooFewCurves(n));
    }
    let p = curves.grid.len();
    for (row, id) in curves.values.iter().zip(&curves.curve_ids) {
        if row.len() != p {
            return Err(FpcaError::GridMismatch { expected: p, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(FpcaError::NonFinite(id.clone()));
        }
    }
    let max = (n - 1).min(p);
    if n_components > max {
        return Err(FpcaError::TooManyComponents { requested: n_components, max });
    }

    let mut mean = vec![0.0; p];
    for row in &curves.values {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, p, |i, j| curves.values[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total_variance = cov.trace();
    // Rounding residue of the centering step; anything at or below it is no variance.
    let scale = curves.values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let noise_floor = p as f64 * (4.0 * f64::EPSILON * scale).powi(2);

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(n_components);
    let mut eigenvalues = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let mut phi: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        orient(&mut phi);
        components.push(phi);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    let explained_ratio = eigenvalues
        .iter()
        .map(|l| if total_variance > noise_floor { l / total_variance } else { 0.0 })
        .collect();

    let mut model = SpectrumModel {
        grid: curves.grid.clone(),
        mean_curve: mean,
        components,
        eigenvalues,
        explained_ratio,
        sign_convention: SIGN_CONVENTION.to_string(),
        total_variance,
        curve_ids: curves.curve_ids.clone(),
        scores: Vec::new(),
    };
    model.scores = curves.values.iter().map(|row| model.scores_of(row)).collect();
    Ok(model)
}

/// Scores a new curve against an existing spectrum; the PC1 percentile is
/// relative to the training scores.
pub fn project_curve(curve_id: &str, curve: &[f64], model: &SpectrumModel) -> Result<SpectrumScore, FpcaError> {
    if curve.len() != model.grid.len() {
        return Err(FpcaError::GridMismatch { expected: model.grid.len(), got: curve.len() });
    }
    let pc_scores = model.scores_of(curve);
    let percentile_pc1 = match pc_scores.first() {
        Some(&s) if !model.scores.is_empty() => score_percentile(s, &model.component_scores(0))?,
        _ => f64::NAN,
    };
    Ok(SpectrumScore { curve_id: curve_id.to_string(), pc_scores, percentile_pc1 })
}

/// `mean + c * sqrt(lambda) * phi` for one retained component.
pub fn reconstruct_mode(model: &SpectrumModel, component: usize, c: f64) -> Result<Vec<f64>, FpcaError> {
    let phi = model.components.get(component).ok_or(FpcaError::IndexOutOfRange {
        index: component,
        retained: model.components.len(),
    })?;
    let sd = model.eigenvalues[component].sqrt();
    Ok(model.mean_curve.iter().zip(phi).map(|(m, p)| m + c * sd * p).collect())
}

/// Percentile rank (0–100) of `score` within `reference`.
///
/// Sorted reference values sit at ranks `100 k / (n - 1)`; scores between two
/// order statistics are interpolated linearly, tied values take the middle
/// of their rank range, and scores outside the range clamp to 0 or 100.
pub fn score_percentile(score: f64, reference: &[f64]) -> Result<f64, FpcaError> {
    if reference.is_empty() {
        return Err(FpcaError::EmptyReference);
    }
    let mut r = reference.to_vec();
    r.sort_by(f64::total_cmp);
    let n = r.len();
    if n == 1 {
        return Ok(match score.total_cmp(&r[0]) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 50.0,
            std::cmp::Ordering::Greater => 100.0,
        });
    }
    let last = (n - 1) as f64;
    let lo = r.partition_point(|&v| v < score);
    let hi = r.partition_point(|&v| v <= score);
    let rank = if hi > lo {
        (lo + hi - 1) as f64 / 2.0
    } else if lo == 0 {
        0.0
    } else if lo == n {
        last
    } else {
        let (a, b) = (r[lo - 1], r[lo]);
        (lo - 1) as f64 + (score - a) / (b - a)
    };
    Ok(100.0 * rank / last)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family() -> CurveGrid {
        let fits: Vec<(String, SoftHingeParams)> = (0..12)
            .map(|i| (format!("p{i}"), SoftHingeParams::new(0.5 + 0.04 * i as f64, 10.0 + i as f64, 1.0 + 0.3 * i as f64)))
            .collect();
        sample_curves(&fits)
    }

    #[test]
    fn grid_is_0_to_50() {
        let g = eccentricity_grid();
        assert_eq!(g.len(), 51);
        assert_eq!((g[0], g[50]), (0.0, 50.0));
    }

    #[test]
    fn sampled_rows() {
        let c = sample_curves(&[("z", SoftHingeParams::new(0.0, 10.0, 2.0)), ("a", SoftHingeParams::new(0.7, 12.0, 3.0))]);
        assert!(c.values[0].iter().all(|&v| v == 0.0));
        assert!(c.values[1].windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn identical_curves_have_no_variance() {
        let p = SoftHingeParams::new(0.6, 15.0, 3.0);
        let c = sample_curves(&[("a", p), ("b", p), ("c", p)]);
        let m = fit_fpca(&c, 2).unwrap();
        assert!(m.eigenvalues.iter().all(|&l| l.abs() < 1e-20));
        assert!(m.scores.iter().flatten().all(|&s| s.abs() < 1e-12));
        assert!(m.explained_ratio.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn orthonormal_and_ordered() {
        let m = fit_fpca(&family(), 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d: f64 = m.components[i].iter().zip(&m.components[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9);
            }
        }
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(m.components[0].iter().sum::<f64>() >= 0.0);
    }

    #[test]
    fn projection_of_mean_and_modes() {
        let m = fit_fpca(&family(), 3).unwrap();
        let s = project_curve("mean", &m.mean_curve, &m).unwrap();
        assert!(s.pc_scores.iter().all(|v| v.abs() < 1e-12));
        let plus = reconstruct_mode(&m, 0, 2.0).unwrap();
        let s = project_curve("plus", &plus, &m).unwrap();
        assert!((s.pc_scores[0] - 2.0 * m.eigenvalues[0].sqrt()).abs() < 1e-9);
        assert!(s.pc_scores[1].abs() < 1e-9 && s.pc_scores[2].abs() < 1e-9);
        assert_eq!(reconstruct_mode(&m, 0, 0.0).unwrap(), m.mean_curve);
        let minus = reconstruct_mode(&m, 0, -2.0).unwrap();
        for ((a, b), mu) in plus.iter().zip(&minus).zip(&m.mean_curve) {
            assert!(((a + b) / 2.0 - mu).abs() < 1e-12);
        }
        assert!(matches!(reconstruct_mode(&m, 3, 1.0), Err(FpcaError::IndexOutOfRange { index: 3, retained: 3 })));
        assert!(matches!(project_curve("x", &[0.0; 50], &m), Err(FpcaError::GridMismatch { expected: 51, got: 50 })));
    }

    #[test]
    fn errors() {
        let one = sample_curves(&[("a", SoftHingeParams::new(0.5, 10.0, 2.0))]);
        assert_eq!(fit_fpca(&one, 1), Err(FpcaError::TooFewCurves(1)));
        assert!(matches!(fit_fpca(&family(), 12), Err(FpcaError::TooManyComponents { max: 11, .. })));
    }

    #[test]
    fn percentile_ranks() {
        let r = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(score_percentile(3.0, &r).unwrap(), 50.0);
        assert_eq!(score_percentile(0.0, &r).unwrap(), 0.0);
        assert_eq!(score_percentile(9.0, &r).unwrap(), 100.0);
        assert_eq!(score_percentile(3.5, &r).unwrap(), 62.5);
        assert_eq!(score_percentile(2.0, &[1.0, 2.0, 2.0, 3.0]).unwrap(), 50.0);
        assert_eq!(score_percentile(1.0, &[]), Err(FpcaError::EmptyReference));
    }
}
