//! Head-contribution curves: the linear EOR/EHR baseline, the hinge and the
//! soft hinge, plus the per-participant EOR and EHR-slope estimators that
//! parameterize the baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::ShiftSet;

/// Upper end of the eccentricity domain, degrees.
pub const ECC_MAX: f64 = 50.0;

/// Lower bound on the soft-hinge softness `s`, degrees.
pub const S_MIN: f64 = 1e-3;

/// Search range for the knee `tau`, degrees.
pub const TAU_RANGE: (f64, f64) = (-20.0, 70.0);

/// Default EOR bin width, degrees.
pub const EOR_BIN_WIDTH: f64 = 5.0;

/// A shift counts as eye-only when the head moved at most this fraction of it.
pub const EYE_ONLY_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("eccentricity {0} deg is outside the model domain [0, 50]")]
    DomainError(f64),
    #[error("need at least 2 shifts beyond alpha = {alpha} deg, found {found}")]
    TooFewPoints { alpha: f64, found: usize },
    #[error("unknown model kind `{0}` (expected linear, hinge or soft-hinge)")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Hinge,
    SoftHinge,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Linear, ModelKind::Hinge, ModelKind::SoftHinge];

    /// Number of free curve parameters counted by AIC.
    pub fn n_params(self) -> usize {
        match self {
            ModelKind::Linear | ModelKind::Hinge => 2,
            ModelKind::SoftHinge => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Hinge => "hinge",
            ModelKind::SoftHinge => "soft-hinge",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "hinge" => Ok(ModelKind::Hinge),
            "soft-hinge" | "soft_hinge" | "softhinge" => Ok(ModelKind::SoftHinge),
            other => Err(ModelError::UnknownModel(other.to_string())),
        }
    }
}

/// Eye-only range `alpha` followed by a linear rise with slope `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeParams {
    pub beta: f64,
    pub tau: f64,
}

/// Soft hinge `beta * softplus((x - tau) / s)`. The asymptotic slope is `beta / s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftHingeParams {
    pub beta: f64,
    pub tau: f64,
    pub s: f64,
}

impl SoftHingeParams {
    pub fn new(beta: f64, tau: f64, s: f64) -> Self {
        Self { beta, tau, s }
    }

    pub fn asymptotic_slope(&self) -> f64 {
        self.beta / self.s
    }
}

/// Parameters of any of the three curves. Serializes as a flat object tagged
/// by `model`, e.g. `{"model":"soft-hinge","beta":0.8,"tau":18.0,"s":6.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelParams {
    Linear(LinearParams),
    Hinge(HingeParams),
    SoftHinge(SoftHingeParams),
}

impl From<LinearParams> for ModelParams {
    fn from(p: LinearParams) -> Self {
        ModelParams::Linear(p)
    }
}

impl From<HingeParams> for ModelParams {
    fn from(p: HingeParams) -> Self {
        ModelParams::Hinge(p)
    }
}

impl From<SoftHingeParams> for ModelParams {
    fn from(p: SoftHingeParams) -> Self {
        ModelParams::SoftHinge(p)
    }
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Linear(_) => ModelKind::Linear,
            ModelParams::Hinge(_) => ModelKind::Hinge,
            ModelParams::SoftHinge(_) => ModelKind::SoftHinge,
        }
    }

    /// Evaluates the curve at `x`, rejecting eccentricities outside [0, 50].
    pub fn eval(&self, x: f64) -> Result<f64, ModelError> {
        if !(0.0..=ECC_MAX).contains(&x) {
            return Err(ModelError::DomainError(x));
        }
        Ok(self.value(x))
    }

    /// Evaluates the curve without the domain check.
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ModelParams::Linear(p) => p.gamma * (x - p.alpha).max(0.0),
            ModelParams::Hinge(p) => p.beta * softplus(x - p.tau),
            ModelParams::SoftHinge(p) => p.beta * softplus((x - p.tau) / p.s),
        }
    }

    /// Parameter values in fitting order (`alpha, gamma` / `beta, tau` / `beta, tau, s`).
    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            ModelParams::Linear(p) => vec![p.alpha, p.gamma],
            ModelParams::Hinge(p) => vec![p.beta, p.tau],
            ModelParams::SoftHinge(p) => vec![p.beta, p.tau, p.s],
        }
    }

    /// Inverse of [`ModelParams::to_vec`]. Panics on a length mismatch.
    pub fn from_slice(kind: ModelKind, v: &[f64]) -> Self {
        assert_eq!(v.len(), kind.n_params(), "parameter vector length");
        match kind {
            ModelKind::Linear => LinearParams { alpha: v[0], gamma: v[1] }.into(),
            ModelKind::Hinge => HingeParams { beta: v[0], tau: v[1] }.into(),
            ModelKind::SoftHinge => SoftHingeParams { beta: v[0], tau: v[1], s: v[2] }.into(),
        }
    }

    pub fn as_soft_hinge(&self) -> Option<SoftHingeParams> {
        match *self {
            ModelParams::SoftHinge(p) => Some(p),
            _ => None,
        }
    }
}

/// `ln(1 + e^z)` without overflow for large `z` or underflow to zero for
/// moderately negative `z`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Partial derivatives of the soft hinge with respect to `(beta, tau, s)`.
pub fn model_gradient(p: &SoftHingeParams, x: f64) -> [f64; 3] {
    let u = (x - p.tau) / p.s;
    let sig = logistic(u);
    [
        softplus(u),
        -(p.beta / p.s) * sig,
        -(p.beta * u / p.s) * sig,
    ]
}

/// Partial derivatives of the hinge with respect to `(beta, tau)`.
pub fn hinge_gradient(p: &HingeParams, x: f64) -> [f64; 2] {
    let u = x - p.tau;
    [softplus(u), -p.beta * logistic(u)]
}

/// Eye-only range: the eccentricity at which the probability of an eye-only
/// shift (`y <= 0.1 x`) first falls to 50 %.
///
/// Shifts are binned on centers `0, w, 2w, ...`; the crossing is linearly
/// interpolated between adjacent non-empty bin centers and clamped to [0, 50].
pub fn compute_eor(shifts: &ShiftSet, bin_width: f64) -> f64 {
    assert!(bin_width > 0.0, "bin width must be positive");
    let n_bins = (ECC_MAX / bin_width).round() as usize + 1;
    let mut eye_only = vec![0usize; n_bins];
    let mut total = vec![0usize; n_bins];
    for s in &shifts.shifts {
        let k = ((s.x / bin_width + 0.5).floor().max(0.0) as usize).min(n_bins - 1);
        total[k] += 1;
        if s.y <= EYE_ONLY_FRACTION * s.x {
            eye_only[k] += 1;
        }
    }
    let bins: Vec<(f64, f64)> = (0..n_bins)
        .filter(|&k| total[k] > 0)
        .map(|k| (k as f64 * bin_width, eye_only[k] as f64 / total[k] as f64))
        .collect();

    let Some(&(_, p0)) = bins.first() else {
        return 0.0;
    };
    if p0 <= 0.5 {
        return 0.0;
    }
    for w in bins.windows(2) {
        let ((c0, p0), (c1, p1)) = (w[0], w[1]);
        if p1 <= 0.5 {
            let frac = (p0 - 0.5) / (p0 - p1);
            return (c0 + frac * (c1 - c0)).clamp(0.0, ECC_MAX);
        }
    }
    ECC_MAX
}

/// Through-origin least-squares slope of `y` on `x - alpha` over shifts beyond `alpha`.
pub fn compute_ehr_slope(shifts: &ShiftSet, alpha: f64) -> Result<f64, ModelError> {
    let (mut sxy, mut sxx, mut n) = (0.0, 0.0, 0usize);
    for s in shifts.shifts.iter().filter(|s| s.x > alpha) {
        let d = s.x - alpha;
        sxy += s.y * d;
        sxx += d * d;
        n += 1;
    }
    if n < 2 {
        return Err(ModelError::TooFewPoints { alpha, found: n });
    }
    Ok(sxy / sxx)
}

/// Evaluates `params` on every grid point.
pub fn eval_grid(params: &ModelParams, grid: &[f64]) -> Result<Vec<f64>, ModelError> {
    grid.iter().map(|&x| params.eval(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::ShiftSet;
    use std::f64::consts::LN_2;

    #[test]
    fn softplus_reference_points() {
        assert!((softplus(0.0) - LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        let tiny = softplus(-50.0);
        assert!(tiny > 0.0);
        assert!((tiny - 1.9287498479639178e-22).abs() < 1e-35);
        for z in [1e6, -1e6, 745.0, -745.0, 1e300] {
            assert!(softplus(z).is_finite());
        }
    }

    #[test]
    fn linear_below_breakpoint_is_zero() {
        let p: ModelParams = LinearParams { alpha: 10.0, gamma: 0.8 }.into();
        assert_eq!(p.eval(5.0).unwrap(), 0.0);
        assert!((p.eval(20.0).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn soft_hinge_knee_value() {
        let p: ModelParams = SoftHingeParams::new(0.5, 20.0, 5.0).into();
        assert!((p.eval(20.0).unwrap() - 0.5 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_is_flat_zero() {
        for p in [
            ModelParams::from(LinearParams { alpha: 10.0, gamma: 0.0 }),
            HingeParams { beta: 0.0, tau: 12.0 }.into(),
            SoftHingeParams::new(0.0, 12.0, 3.0).into(),
        ] {
            for x in 0..=50 {
                assert_eq!(p.eval(x as f64).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn domain_is_enforced() {
        let p: ModelParams = HingeParams { beta: 0.5, tau: 10.0 }.into();
        assert_eq!(p.eval(-0.1), Err(ModelError::DomainError(-0.1)));
        assert_eq!(p.eval(50.5), Err(ModelError::DomainError(50.5)));
        assert!(p.eval(50.0).is_ok());
    }

    #[test]
    fn gradient_at_knee() {
        let p = SoftHingeParams::new(0.7, 15.0, 4.0);
        let g = model_gradient(&p, 15.0);
        assert!((g[0] - LN_2).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
        let g0 = model_gradient(&SoftHingeParams::new(0.0, 15.0, 4.0), 33.0);
        assert_eq!(g0[1], 0.0);
        assert_eq!(g0[2], 0.0);
    }

    #[test]
    fn json_shape() {
        let p: ModelParams = SoftHingeParams::new(0.8, 18.0, 6.0).into();
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(v, serde_json::json!({"model": "soft-hinge", "beta": 0.8, "tau": 18.0, "s": 6.0}));
        let l: ModelParams = serde_json::from_str(r#"{"model":"linear","alpha":12.5,"gamma":0.6}"#).unwrap();
        assert_eq!(l, LinearParams { alpha: 12.5, gamma: 0.6 }.into());
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("soft-hinge".parse::<ModelKind>().unwrap(), ModelKind::SoftHinge);
        assert!("cubic".parse::<ModelKind>().is_err());
    }

    #[test]
    fn eor_extremes() {
        let all_eye = ShiftSet::from_pairs("p", &[(5.0, 0.0), (20.0, 1.0), (45.0, 4.0)]);
        assert_eq!(compute_eor(&all_eye, EOR_BIN_WIDTH), 50.0);
        let all_head = ShiftSet::from_pairs("p", &[(5.0, 3.0), (20.0, 10.0), (45.0, 30.0)]);
        assert_eq!(compute_eor(&all_head, EOR_BIN_WIDTH), 0.0);
    }

    #[test]
    fn eor_interpolates_between_bin_centers() {
        // Bins at 0..20 all eye-only, 60 % at 20, 40 % at 25, none beyond.
        let mut pairs = Vec::new();
        for c in [0.0, 5.0, 10.0, 15.0] {
            pairs.push((c + 0.5, 0.0));
        }
        for i in 0..10 {
            pairs.push((20.0, if i < 6 { 0.0 } else { 10.0 }));
            pairs.push((25.0, if i < 4 { 0.0 } else { 10.0 }));
        }
        pairs.push((30.0, 20.0));
        let eor = compute_eor(&ShiftSet::from_pairs("p", &pairs), EOR_BIN_WIDTH);
        assert!((eor - 22.5).abs() < 0.1, "eor = {eor}");
    }

    #[test]
    fn ehr_slope_exact_and_zero() {
        let pairs: Vec<_> = (16..=50).map(|x| (x as f64, 0.6 * (x as f64 - 15.0))).collect();
        let g = compute_ehr_slope(&ShiftSet::from_pairs("p", &pairs), 15.0).unwrap();
        assert!((g - 0.6).abs() < 1e-12);
        let zeros: Vec<_> = (0..=50).map(|x| (x as f64, 0.0)).collect();
        assert_eq!(compute_ehr_slope(&ShiftSet::from_pairs("p", &zeros), 10.0).unwrap(), 0.0);
        let few = ShiftSet::from_pairs("p", &[(40.0, 3.0)]);
        assert!(matches!(compute_ehr_slope(&few, 10.0), Err(ModelError::TooFewPoints { found: 1, .. })));
    }
}
