//! Per-participant curve fitting.
//!
//! The hinge and soft hinge are fitted by box-constrained Levenberg–Marquardt
//! from several seeded random starts; the linear baseline is not optimized,
//! its breakpoint and slope come from the EOR / EHR-slope estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::ShiftSet;
use crate::models::{
    self, compute_ehr_slope, compute_eor, hinge_gradient, model_gradient, HingeParams, LinearParams, ModelError,
    ModelKind, ModelParams, SoftHingeParams, EOR_BIN_WIDTH, S_MIN, TAU_RANGE,
};

/// Floor applied to `sse / n` inside the AIC logarithm.
const AIC_SSE_FLOOR: f64 = 1e-300;

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no data points to fit")]
    EmptyData,
    #[error("observed values have zero variance; R² is undefined")]
    ZeroVariance,
    #[error("start point {0:?} lies outside the parameter bounds")]
    StartOutOfBounds(Vec<f64>),
    #[error("the {0} model has no free parameters to optimize")]
    NotOptimizable(ModelKind),
    #[error("model comparison needs results on identical data ({0})")]
    MismatchedData(String),
    #[error("model comparison needs at least 2 results, got {0}")]
    TooFewResults(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Closed interval for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.low, self.high)
    }
}

/// Per-parameter box for `(beta, tau, s)`; the hinge uses the first two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub beta: Interval,
    pub tau: Interval,
    pub s: Interval,
}

impl ParamBox {
    fn intervals(&self, kind: ModelKind) -> Vec<Interval> {
        match kind {
            ModelKind::SoftHinge => vec![self.beta, self.tau, self.s],
            _ => vec![self.beta, self.tau],
        }
    }

    /// Feasible region of the optimizer. `s` is capped at 1000° where the
    /// curve is already flat across the domain.
    pub fn feasible() -> Self {
        Self {
            beta: Interval::new(0.0, 1.0),
            tau: Interval::new(TAU_RANGE.0, TAU_RANGE.1),
            s: Interval::new(S_MIN, 1e3),
        }
    }

    /// Region random starts are drawn from.
    pub fn starts() -> Self {
        Self {
            beta: Interval::new(0.0, 1.0),
            tau: Interval::new(0.0, 50.0),
            s: Interval::new(0.5, 20.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol_grad: f64,
    pub tol_step: f64,
    pub bounds: ParamBox,
    pub start_box: ParamBox,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 20,
            seed: 0,
            max_iters: 200,
            tol_grad: 1e-8,
            tol_step: 1e-10,
            bounds: ParamBox::feasible(),
            start_box: ParamBox::starts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub sse: f64,
    /// `None` when the observations have zero variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub aic: f64,
}

impl FitMetrics {
    pub fn r2(&self) -> Result<f64, FitError> {
        self.r2.ok_or(FitError::ZeroVariance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub participant_id: String,
    pub model: ModelKind,
    pub params: ModelParams,
    pub sse: f64,
    pub r2: Option<f64>,
    pub rmse: f64,
    pub aic: f64,
    pub n_points: usize,
    pub n_params_k: usize,
    pub converged: bool,
    pub start_index: usize,
    pub iterations: usize,
    /// Identifies the data set the fit was made on.
    pub data_digest: String,
    /// Final SSE reached from each start, in start order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub start_sse: Vec<f64>,
}

pub fn fit_metrics(data: &ShiftSet, params: &ModelParams, k: usize) -> Result<FitMetrics, FitError> {
    if data.is_empty() {
        return Err(FitError::EmptyData);
    }
    let n = data.len() as f64;
    let mean = data.shifts.iter().map(|s| s.y).sum::<f64>() / n;
    let (mut sse, mut sst) = (0.0, 0.0);
    for s in &data.shifts {
        let r = s.y - params.value(s.x);
        sse += r * r;
        sst += (s.y - mean) * (s.y - mean);
    }
    Ok(FitMetrics {
        sse,
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        rmse: (sse / n).sqrt(),
        aic: aic(sse, data.len(), k),
    })
}

/// Gaussian-likelihood AIC, `n ln(sse / n) + 2k`.
pub fn aic(sse: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (sse / n).max(AIC_SSE_FLOOR).ln() + 2.0 * k as f64
}

/// Hex SHA-256 over the `(x, y)` bit patterns of the data.
pub fn data_digest(data: &ShiftSet) -> String {
    let mut h = Sha256::new();
    h.update(data.participant_id.as_bytes());
    for s in &data.shifts {
        h.update(s.x.to_bits().to_le_bytes());
        h.update(s.y.to_bits().to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

struct LocalFit {
    params: Vec<f64>,
    sse: f64,
    converged: bool,
    iterations: usize,
}

fn eval_with_gradient(kind: ModelKind, p: &[f64], x: f64, grad: &mut [f64]) -> f64 {
    match kind {
        ModelKind::SoftHinge => {
            let sh = SoftHingeParams { beta: p[0], tau: p[1], s: p[2] };
            grad.copy_from_slice(&model_gradient(&sh, x));
            sh.beta * models::softplus((x - sh.tau) / sh.s)
        }
        ModelKind::Hinge => {
            let h = HingeParams { beta: p[0], tau: p[1] };
            grad.copy_from_slice(&hinge_gradient(&h, x));
            h.beta * models::softplus(x - h.tau)
        }
        ModelKind::Linear => unreachable!("linear model is never optimized"),
    }
}

fn sse_at(kind: ModelKind, p: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    let params = ModelParams::from_slice(kind, p);
    xs.iter().zip(ys).map(|(&x, &y)| (y - params.value(x)).powi(2)).sum()
}

/// Solves the dense system `a x = b` in place by Gaussian elimination with
/// partial pivoting. Returns `None` if the matrix is numerically singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= scale * 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Box-constrained Levenberg–Marquardt from a single start.
///
/// Parameters sitting on a bound with the gradient pushing outward are frozen
/// for the step; the damped normal equations are solved over the remaining
/// ones and the trial point is projected back into the box.
fn local_fit(kind: ModelKind, xs: &[f64], ys: &[f64], start: &[f64], bounds: &[Interval], cfg: &FitConfig) -> LocalFit {
    let k = start.len();
    let mut p = start.to_vec();
    let mut sse = sse_at(kind, &p, xs, ys);
    let mut lambda = LAMBDA_INIT;
    let mut grad_row = vec![0.0; k];

    for iter in 0..cfg.max_iters {
        // Normal equations: jtj = J^T J, jtr = J^T r with r = y - f.
        let mut jtj = vec![vec![0.0; k]; k];
        let mut jtr = vec![0.0; k];
        for (&x, &y) in xs.iter().zip(ys) {
            let f = eval_with_gradient(kind, &p, x, &mut grad_row);
            let r = y - f;
            for i in 0..k {
                jtr[i] += grad_row[i] * r;
                for j in 0..=i {
                    jtj[i][j] += grad_row[i] * grad_row[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                jtj[j][i] = jtj[i][j];
            }
        }

        // Gradient of the SSE is -2 J^T r; descent direction is +J^T r.
        let free: Vec<usize> = (0..k)
            .filter(|&i| {
                let at_low = p[i] <= bounds[i].low && jtr[i] < 0.0;
                let at_high = p[i] >= bounds[i].high && jtr[i] > 0.0;
                !(at_low || at_high)
            })
            .collect();
        let pgrad = free.iter().map(|&i| (2.0 * jtr[i]).abs()).fold(0.0, f64::max);
        if pgrad <= cfg.tol_grad * sse.max(1.0) {
            return LocalFit { params: p, sse, converged: true, iterations: iter };
        }

        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        loop {
            let a: Vec<Vec<f64>> = free
                .iter()
                .map(|&i| {
                    free.iter()
                        .map(|&j| {
                            if i == j {
                                jtj[i][i] + lambda * jtj[i][i].max(1e-12)
                            } else {
                                jtj[i][j]
                            }
                        })
                        .collect()
                })
                .collect();
            let b: Vec<f64> = free.iter().map(|&i| jtr[i]).collect();

            if let Some(delta) = solve_dense(a, b) {
                let mut trial = p.clone();
                for (&i, d) in free.iter().zip(&delta) {
                    trial[i] = bounds[i].clamp(p[i] + d);
                }
                let step = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let trial_sse = sse_at(kind, &trial, xs, ys);
                if trial_sse < sse {
                    p = trial;
                    sse = trial_sse;
                    lambda = (lambda / 10.0).max(LAMBDA_MIN);
                    if step <= cfg.tol_step * (p_norm + cfg.tol_step) {
                        return LocalFit { params: p, sse, converged: true, iterations: iter + 1 };
                    }
                    break;
                }
                if step <= cfg.tol_step * (p_norm + cfg.tol_step) {
                    return LocalFit { params: p, sse, converged: true, iterations: iter + 1 };
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // No descent is possible at working precision.
                return LocalFit { params: p, sse, converged: true, iterations: iter + 1 };
            }
        }
    }
    LocalFit { params: p, sse, converged: false, iterations: cfg.max_iters }
}

fn assemble(
    data: &ShiftSet,
    params: ModelParams,
    converged: bool,
    start_index: usize,
    iterations: usize,
) -> Result<FitResult, FitError> {
    let kind = params.kind();
    let k = kind.n_params();
    let m = fit_metrics(data, &params, k)?;
    Ok(FitResult {
        participant_id: data.participant_id.clone(),
        model: kind,
        params,
        sse: m.sse,
        r2: m.r2,
        rmse: m.rmse,
        aic: m.aic,
        n_points: data.len(),
        n_params_k: k,
        converged,
        start_index,
        iterations,
        data_digest: data_digest(data),
        start_sse: Vec::new(),
    })
}

/// Local bound-constrained least-squares fit of the hinge or soft hinge from `start`.
/// A run that hits `max_iters` is still returned, with `converged == false`.
pub fn fit_bounded_least_squares(
    data: &ShiftSet,
    kind: ModelKind,
    start: &ModelParams,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    if kind == ModelKind::Linear || start.kind() != kind {
        return Err(FitError::NotOptimizable(kind));
    }
    if data.is_empty() {
        return Err(FitError::EmptyData);
    }
    let bounds = cfg.bounds.intervals(kind);
    let p0 = start.to_vec();
    if p0.iter().zip(&bounds).any(|(v, b)| !b.contains(*v)) {
        return Err(FitError::StartOutOfBounds(p0));
    }
    let (xs, ys) = (data.xs(), data.ys());
    let fit = local_fit(kind, &xs, &ys, &p0, &bounds, cfg);
    assemble(data, ModelParams::from_slice(kind, &fit.params), fit.converged, 0, fit.iterations)
}

/// RNG for one start; depends only on the master seed, the participant and
/// the start index so scheduling cannot change results.
pub fn start_rng(seed: u64, participant_id: &str, start_index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((participant_id.len() as u64).to_le_bytes());
    h.update(participant_id.as_bytes());
    h.update((start_index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn draw_start(kind: ModelKind, bx: &ParamBox, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut draw = |iv: Interval| if iv.high > iv.low { rng.gen_range(iv.low..=iv.high) } else { iv.low };
    let v: Vec<f64> = bx.intervals(kind).into_iter().map(&mut draw).collect();
    ModelParams::from_slice(kind, &v)
}

/// Linear baseline parameters: `alpha` = EOR, `gamma` = EHR slope beyond it
/// (zero when fewer than two shifts lie beyond the EOR).
pub fn linear_baseline(data: &ShiftSet) -> LinearParams {
    let alpha = compute_eor(data, EOR_BIN_WIDTH);
    let gamma = compute_ehr_slope(data, alpha).unwrap_or(0.0);
    LinearParams { alpha, gamma }
}

/// Best-of-`n_starts` fit for one participant and model.
pub fn fit_participant(data: &ShiftSet, kind: ModelKind, cfg: &FitConfig) -> Result<FitResult, FitError> {
    if data.is_empty() {
        return Err(FitError::EmptyData);
    }
    if kind == ModelKind::Linear {
        return assemble(data, linear_baseline(data).into(), true, 0, 0);
    }

    let bounds = cfg.bounds.intervals(kind);
    let (xs, ys) = (data.xs(), data.ys());
    let mut best: Option<(usize, LocalFit)> = None;
    let mut start_sse = Vec::with_capacity(cfg.n_starts);
    for i in 0..cfg.n_starts.max(1) {
        let mut rng = start_rng(cfg.seed, &data.participant_id, i);
        let start = draw_start(kind, &cfg.start_box, &mut rng).to_vec();
        let start: Vec<f64> = start.iter().zip(&bounds).map(|(v, b)| b.clamp(*v)).collect();
        let fit = local_fit(kind, &xs, &ys, &start, &bounds, cfg);
        start_sse.push(fit.sse);
        if best.as_ref().is_none_or(|(_, b)| fit.sse < b.sse) {
            best = Some((i, fit));
        }
    }
    let (index, fit) = best.expect("at least one start");
    let mut result = assemble(data, ModelParams::from_slice(kind, &fit.params), fit.converged, index, fit.iterations)?;
    result.start_sse = start_sse;
    Ok(result)
}

/// Ranks results by AIC, then fewer parameters, then lower RMSE.
pub fn compare_models(results: &[FitResult]) -> Result<Vec<ModelKind>, FitError> {
    if results.len() < 2 {
        return Err(FitError::TooFewResults(results.len()));
    }
    let first = &results[0];
    if let Some(r) = results
        .iter()
        .find(|r| r.data_digest != first.data_digest || r.n_points != first.n_points)
    {
        return Err(FitError::MismatchedData(format!(
            "{} ({}) vs {} ({})",
            first.model, first.data_digest, r.model, r.data_digest
        )));
    }
    let mut order: Vec<&FitResult> = results.iter().collect();
    order.sort_by(|a, b| {
        a.aic
            .total_cmp(&b.aic)
            .then(a.n_params_k.cmp(&b.n_params_k))
            .then(a.rmse.total_cmp(&b.rmse))
    });
    Ok(order.into_iter().map(|r| r.model).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_data(p: SoftHingeParams) -> ShiftSet {
        let mp: ModelParams = p.into();
        let pairs: Vec<_> = (0..=50).map(|x| (x as f64, mp.value(x as f64))).collect();
        ShiftSet::from_pairs("p", &pairs)
    }

    #[test]
    fn noiseless_from_truth() {
        let truth = SoftHingeParams::new(0.8, 18.0, 6.0);
        let data = grid_data(truth);
        let r = fit_bounded_least_squares(&data, ModelKind::SoftHinge, &truth.into(), &FitConfig::default()).unwrap();
        assert!(r.sse < 1e-10);
        let p = r.params.as_soft_hinge().unwrap();
        assert!((p.beta - 0.8).abs() < 1e-6 && (p.tau - 18.0).abs() < 1e-6 && (p.s - 6.0).abs() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn noiseless_from_far_start() {
        let truth = SoftHingeParams::new(0.8, 18.0, 6.0);
        let data = grid_data(truth);
        let start = SoftHingeParams::new(0.3, 30.0, 2.0);
        let r = fit_bounded_least_squares(&data, ModelKind::SoftHinge, &start.into(), &FitConfig::default()).unwrap();
        let p = r.params.as_soft_hinge().unwrap();
        assert!(r.sse < 1e-10, "sse {}", r.sse);
        assert!((p.tau - 18.0).abs() < 1e-4, "{p:?}");
    }

    #[test]
    fn all_zero_pins_beta_to_bound() {
        let pairs: Vec<_> = (0..=50).map(|x| (x as f64, 0.0)).collect();
        let data = ShiftSet::from_pairs("p", &pairs);
        let start = SoftHingeParams::new(0.6, 20.0, 5.0);
        let r = fit_bounded_least_squares(&data, ModelKind::SoftHinge, &start.into(), &FitConfig::default()).unwrap();
        assert!(r.params.as_soft_hinge().unwrap().beta < 1e-6);
        assert!(r.sse < 1e-10);
        assert_eq!(r.r2, None);
    }

    #[test]
    fn rejects_bad_inputs() {
        let empty = ShiftSet::from_pairs("p", &[]);
        let start: ModelParams = SoftHingeParams::new(0.5, 10.0, 2.0).into();
        let cfg = FitConfig::default();
        assert_eq!(fit_bounded_least_squares(&empty, ModelKind::SoftHinge, &start, &cfg), Err(FitError::EmptyData));
        let data = grid_data(SoftHingeParams::new(0.5, 10.0, 2.0));
        let outside: ModelParams = SoftHingeParams::new(1.5, 10.0, 2.0).into();
        assert!(matches!(
            fit_bounded_least_squares(&data, ModelKind::SoftHinge, &outside, &cfg),
            Err(FitError::StartOutOfBounds(_))
        ));
        assert!(matches!(fit_participant(&empty, ModelKind::Hinge, &cfg), Err(FitError::EmptyData)));
    }

    #[test]
    fn metrics_arithmetic() {
        let pairs: Vec<_> = (0..100).map(|i| (i as f64 * 0.5, 0.0)).collect();
        let data = ShiftSet::from_pairs("p", &pairs);
        let m = fit_metrics(&data, &LinearParams { alpha: 0.0, gamma: 0.0 }.into(), 3).unwrap();
        assert_eq!(m.sse, 0.0);
        assert_eq!(m.r2(), Err(FitError::ZeroVariance));
        assert!((aic(100.0, 100, 3) - 6.0).abs() < 1e-12);

        let data = ShiftSet::from_pairs("p", &[(10.0, 1.0), (20.0, 2.0), (30.0, 6.0)]);
        let mean_model: ModelParams = LinearParams { alpha: 0.0, gamma: 0.0 }.into();
        // Predicting 0 everywhere on this data is worse than the mean.
        assert!(fit_metrics(&data, &mean_model, 2).unwrap().r2.unwrap() < 0.0);
        let perfect: ModelParams = LinearParams { alpha: 0.0, gamma: 0.1 }.into();
        let d2 = ShiftSet::from_pairs("p", &[(10.0, 1.0), (20.0, 2.0), (30.0, 3.0)]);
        let m = fit_metrics(&d2, &perfect, 2).unwrap();
        assert!((m.r2.unwrap() - 1.0).abs() < 1e-12);
        assert!(m.rmse < 1e-12);
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let data = ShiftSet::from_pairs("p", &[(10.0, 1.0), (20.0, 3.0), (30.0, 5.0)]);
        // gamma * max(0, x - alpha) with gamma = 0 is not the mean; use a
        // soft hinge with s huge and beta chosen to sit at the mean 3.0.
        let flat: ModelParams = SoftHingeParams::new(3.0 / std::f64::consts::LN_2, 0.0, 1e300).into();
        let m = fit_metrics(&data, &flat, 3).unwrap();
        assert!(m.r2.unwrap().abs() < 1e-12);
    }

    #[test]
    fn ranking_rules() {
        let data = grid_data(SoftHingeParams::new(0.5, 10.0, 2.0));
        let mut a = assemble(&data, SoftHingeParams::new(0.5, 10.0, 2.0).into(), true, 0, 0).unwrap();
        let mut b = assemble(&data, HingeParams { beta: 0.5, tau: 10.0 }.into(), true, 0, 0).unwrap();
        a.aic = 6.0;
        b.aic = 9.0;
        assert_eq!(compare_models(&[b.clone(), a.clone()]).unwrap()[0], ModelKind::SoftHinge);
        b.aic = 6.0;
        assert_eq!(compare_models(&[a.clone(), b.clone()]).unwrap()[0], ModelKind::Hinge);
        let other = grid_data(SoftHingeParams::new(0.6, 10.0, 2.0));
        let c = assemble(&other, HingeParams { beta: 0.5, tau: 10.0 }.into(), true, 0, 0).unwrap();
        assert!(matches!(compare_models(&[a.clone(), c]), Err(FitError::MismatchedData(_))));
        assert!(matches!(compare_models(&[a]), Err(FitError::TooFewResults(1))));
    }

    #[test]
    fn fit_result_json_fields() {
        let data = grid_data(SoftHingeParams::new(0.5, 10.0, 2.0));
        let r = fit_participant(&data, ModelKind::Hinge, &FitConfig { n_starts: 3, ..FitConfig::default() }).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["participant_id", "model", "params", "sse", "r2", "rmse", "aic", "n_points", "converged"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["params"]["model"], "hinge");
    }
}
