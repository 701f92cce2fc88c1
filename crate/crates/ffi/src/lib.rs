//! C ABI over the `eyehead` library.
//!
//! Fits and spectra live behind opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns an [`EhStatus`];
//! on failure a message is kept per thread and can be read with
//! [`eh_last_error`]. Array outputs take a capacity and report the number of
//! values the full answer needs, so callers can size a buffer with a first
//! call.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use eyehead::events::ShiftSet;
use eyehead::fitting::{fit_participant, FitConfig, FitResult};
use eyehead::fpca::{self, FpcaError, SpectrumModel, GRID_LEN};
use eyehead::models::{self, ModelKind, ModelParams, SoftHingeParams};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A curve was evaluated outside its domain.
    Model = 3,
    /// Fitting failed, e.g. too few points.
    Fit = 4,
    TooFewCurves = 5,
    GridMismatch = 6,
    /// Any other spectrum failure.
    Fpca = 7,
    /// Output buffer too small; the needed length was still written.
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhModelKind {
    Linear = 0,
    Hinge = 1,
    SoftHinge = 2,
}

impl From<EhModelKind> for ModelKind {
    fn from(k: EhModelKind) -> Self {
        match k {
            EhModelKind::Linear => ModelKind::Linear,
            EhModelKind::Hinge => ModelKind::Hinge,
            EhModelKind::SoftHinge => ModelKind::SoftHinge,
        }
    }
}

impl From<ModelKind> for EhModelKind {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::Linear => EhModelKind::Linear,
            ModelKind::Hinge => EhModelKind::Hinge,
            ModelKind::SoftHinge => EhModelKind::SoftHinge,
        }
    }
}

/// Fit options. Zero fields fall back to the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EhFitOptions {
    pub seed: u64,
    pub n_starts: usize,
    pub max_iters: usize,
}

/// Goodness of fit. `r2` is NaN when the observations have no variance.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EhFitSummary {
    pub kind: EhModelKind,
    pub sse: f64,
    pub r2: f64,
    pub rmse: f64,
    pub aic: f64,
    pub n_points: usize,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// A fitted curve for one participant.
pub struct EhFit(FitResult);

/// A fitted functional PCA.
pub struct EhSpectrum(SpectrumModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let s = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: EhStatus, msg: impl ToString) -> EhStatus {
    set_error(msg);
    status
}

fn fpca_status(e: &FpcaError) -> EhStatus {
    match e {
        FpcaError::TooFewCurves(_) => EhStatus::TooFewCurves,
        FpcaError::GridMismatch { .. } => EhStatus::GridMismatch,
        _ => EhStatus::Fpca,
    }
}

/// Runs `f`, turning a panic into [`EhStatus::Panic`].
fn guard(f: impl FnOnce() -> EhStatus) -> EhStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(EhStatus::Panic, msg)
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Option<&'a [f64]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, n))
    }
}

/// Copies `src` into `out[..cap]` and stores `src.len()` in `len_out`.
unsafe fn copy_out(src: &[f64], out: *mut f64, cap: usize, len_out: *mut usize) -> EhStatus {
    if !len_out.is_null() {
        *len_out = src.len();
    }
    if src.len() > cap {
        return fail(EhStatus::BufferTooSmall, format!("need {} values, buffer holds {cap}", src.len()));
    }
    if src.is_empty() {
        return EhStatus::Ok;
    }
    if out.is_null() {
        return fail(EhStatus::NullPointer, "output buffer is null");
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    EhStatus::Ok
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn eh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Overflow-safe `ln(1 + e^z)`.
#[no_mangle]
pub extern "C" fn eh_softplus(z: f64) -> f64 {
    models::softplus(z)
}

/// Number of points on the eccentricity grid used by spectra.
#[no_mangle]
pub extern "C" fn eh_grid_len() -> usize {
    GRID_LEN
}

/// Evaluates `beta * softplus((x - tau) / s)`.
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn eh_soft_hinge_eval(beta: f64, tau: f64, s: f64, x: f64, out: *mut f64) -> EhStatus {
    guard(|| {
        if out.is_null() {
            return fail(EhStatus::NullPointer, "out is null");
        }
        match ModelParams::from(SoftHingeParams::new(beta, tau, s)).eval(x) {
            Ok(v) => {
                *out = v;
                EhStatus::Ok
            }
            Err(e) => fail(EhStatus::Model, e),
        }
    })
}

/// Fits one model to `n` points `(x[i], y[i])`. `options` may be null.
///
/// # Safety
/// `x` and `y` must each hold `n` doubles; `out` must point to a writable
/// handle slot. The handle is released with [`eh_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn eh_fit(
    x: *const f64,
    y: *const f64,
    n: usize,
    kind: EhModelKind,
    options: *const EhFitOptions,
    out: *mut *mut EhFit,
) -> EhStatus {
    guard(|| {
        if out.is_null() {
            return fail(EhStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let (Some(xs), Some(ys)) = (slice(x, n), slice(y, n)) else {
            return fail(EhStatus::NullPointer, "x or y is null");
        };
        let mut cfg = FitConfig::default();
        if let Some(o) = options.as_ref() {
            cfg.seed = o.seed;
            if o.n_starts > 0 {
                cfg.n_starts = o.n_starts;
            }
            if o.max_iters > 0 {
                cfg.max_iters = o.max_iters;
            }
        }
        let pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return fail(EhStatus::InvalidArgument, "points must be finite");
        }
        match fit_participant(&ShiftSet::from_pairs("ffi", &pairs), kind.into(), &cfg) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(EhFit(r)));
                EhStatus::Ok
            }
            Err(e) => fail(EhStatus::Fit, e),
        }
    })
}

/// Fitted parameters: `(alpha, gamma)` for linear, `(beta, tau)` for hinge
/// and `(beta, tau, s)` for the soft hinge.
///
/// # Safety
/// `fit` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn eh_fit_params(fit: *const EhFit, out: *mut f64, cap: usize, len_out: *mut usize) -> EhStatus {
    guard(|| match fit.as_ref() {
        None => fail(EhStatus::NullPointer, "fit is null"),
        Some(f) => copy_out(&f.0.params.to_vec(), out, cap, len_out),
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eh_fit_summary(fit: *const EhFit, out: *mut EhFitSummary) -> EhStatus {
    guard(|| {
        let (Some(f), false) = (fit.as_ref(), out.is_null()) else {
            return fail(EhStatus::NullPointer, "fit or out is null");
        };
        let r = &f.0;
        *out = EhFitSummary {
            kind: r.model.into(),
            sse: r.sse,
            r2: r.r2.unwrap_or(f64::NAN),
            rmse: r.rmse,
            aic: r.aic,
            n_points: r.n_points,
            n_params: r.n_params_k,
            converged: r.converged,
            iterations: r.iterations,
        };
        EhStatus::Ok
    })
}

/// Evaluates a fitted curve at `x`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eh_fit_eval(fit: *const EhFit, x: f64, out: *mut f64) -> EhStatus {
    guard(|| {
        let (Some(f), false) = (fit.as_ref(), out.is_null()) else {
            return fail(EhStatus::NullPointer, "fit or out is null");
        };
        match f.0.params.eval(x) {
            Ok(v) => {
                *out = v;
                EhStatus::Ok
            }
            Err(e) => fail(EhStatus::Model, e),
        }
    })
}

/// # Safety
/// `fit` must be null or a handle from [`eh_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eh_fit_free(fit: *mut EhFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Fits a spectrum to `n_curves` soft hinges given row-wise as
/// `(beta, tau, s)` triples.
///
/// # Safety
/// `params` must hold `3 * n_curves` doubles; `out` must point to a writable
/// handle slot. The handle is released with [`eh_spectrum_free`].
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_fit(
    params: *const f64,
    n_curves: usize,
    n_components: usize,
    out: *mut *mut EhSpectrum,
) -> EhStatus {
    guard(|| {
        if out.is_null() {
            return fail(EhStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(p) = slice(params, 3 * n_curves) else {
            return fail(EhStatus::NullPointer, "params is null");
        };
        let fits: Vec<(String, SoftHingeParams)> = p
            .chunks_exact(3)
            .enumerate()
            .map(|(i, c)| (i.to_string(), SoftHingeParams::new(c[0], c[1], c[2])))
            .collect();
        match fpca::fit_fpca(&fpca::sample_curves(&fits), n_components) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(EhSpectrum(m)));
                EhStatus::Ok
            }
            Err(e) => fail(fpca_status(&e), e),
        }
    })
}

/// # Safety
/// `spectrum` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_n_components(spectrum: *const EhSpectrum) -> usize {
    spectrum.as_ref().map_or(0, |s| s.0.n_components())
}

/// Retained eigenvalues, largest first.
///
/// # Safety
/// `spectrum` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_eigenvalues(
    spectrum: *const EhSpectrum,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> EhStatus {
    guard(|| match spectrum.as_ref() {
        None => fail(EhStatus::NullPointer, "spectrum is null"),
        Some(s) => copy_out(&s.0.eigenvalues, out, cap, len_out),
    })
}

/// Fraction of total variance carried by each retained component.
///
/// # Safety
/// As for [`eh_spectrum_eigenvalues`].
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_explained(
    spectrum: *const EhSpectrum,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> EhStatus {
    guard(|| match spectrum.as_ref() {
        None => fail(EhStatus::NullPointer, "spectrum is null"),
        Some(s) => copy_out(&s.0.explained_ratio, out, cap, len_out),
    })
}

/// Mean curve on the grid.
///
/// # Safety
/// As for [`eh_spectrum_eigenvalues`].
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_mean(spectrum: *const EhSpectrum, out: *mut f64, cap: usize, len_out: *mut usize) -> EhStatus {
    guard(|| match spectrum.as_ref() {
        None => fail(EhStatus::NullPointer, "spectrum is null"),
        Some(s) => copy_out(&s.0.mean_curve, out, cap, len_out),
    })
}

/// Loading of component `index` on the grid.
///
/// # Safety
/// As for [`eh_spectrum_eigenvalues`].
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_component(
    spectrum: *const EhSpectrum,
    index: usize,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> EhStatus {
    guard(|| match spectrum.as_ref() {
        None => fail(EhStatus::NullPointer, "spectrum is null"),
        Some(s) => match s.0.components.get(index) {
            Some(phi) => copy_out(phi, out, cap, len_out),
            None => fail(
                EhStatus::InvalidArgument,
                FpcaError::IndexOutOfRange { index, retained: s.0.n_components() },
            ),
        },
    })
}

/// Scores a curve sampled on the grid. Writes one score per retained
/// component and, if `percentile_out` is not null, the PC1 percentile among
/// the training curves.
///
/// # Safety
/// `curve` must hold `len` doubles, `scores_out` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_project(
    spectrum: *const EhSpectrum,
    curve: *const f64,
    len: usize,
    scores_out: *mut f64,
    cap: usize,
    percentile_out: *mut f64,
) -> EhStatus {
    guard(|| {
        let (Some(s), Some(c)) = (spectrum.as_ref(), slice(curve, len)) else {
            return fail(EhStatus::NullPointer, "spectrum or curve is null");
        };
        match fpca::project_curve("ffi", c, &s.0) {
            Ok(score) => {
                if !percentile_out.is_null() {
                    *percentile_out = score.percentile_pc1;
                }
                copy_out(&score.pc_scores, scores_out, cap, ptr::null_mut())
            }
            Err(e) => fail(fpca_status(&e), e),
        }
    })
}

/// # Safety
/// `spectrum` must be null or a handle from [`eh_spectrum_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eh_spectrum_free(spectrum: *mut EhSpectrum) {
    if !spectrum.is_null() {
        drop(Box::from_raw(spectrum));
    }
}

/// Percentile rank of `score` among `n` reference scores, in [0, 100].
/// Ties take the middle of their rank range.
///
/// # Safety
/// `reference` must hold `n` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn eh_percentile(score: f64, reference: *const f64, n: usize, out: *mut f64) -> EhStatus {
    guard(|| {
        let (Some(r), false) = (slice(reference, n), out.is_null()) else {
            return fail(EhStatus::NullPointer, "reference or out is null");
        };
        match fpca::score_percentile(score, r) {
            Ok(p) => {
                *out = p;
                EhStatus::Ok
            }
            Err(e) => fail(EhStatus::InvalidArgument, e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(eh_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn buffer_too_small_reports_needed_length() {
        let mut len = 0;
        let mut buf = [0.0; 2];
        let st = unsafe { copy_out(&[1.0, 2.0, 3.0], buf.as_mut_ptr(), 2, &mut len) };
        assert_eq!(st, EhStatus::BufferTooSmall);
        assert_eq!(len, 3);
        assert!(!eh_last_error().is_null());
    }

    #[test]
    fn errors_are_cleared_by_the_next_call() {
        unsafe {
            assert_eq!(eh_soft_hinge_eval(1.0, 0.0, 1.0, 0.0, ptr::null_mut()), EhStatus::NullPointer);
            assert!(!eh_last_error().is_null());
            let mut v = 0.0;
            assert_eq!(eh_soft_hinge_eval(1.0, 0.0, 1.0, 0.0, &mut v), EhStatus::Ok);
            assert!(eh_last_error().is_null());
        }
    }
}
