use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use eyehead_ffi::*;

fn last_error() -> String {
    let p = eh_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn curve(beta: f64, tau: f64, s: f64) -> Vec<f64> {
    (0..eh_grid_len())
        .map(|i| {
            let mut v = 0.0;
            assert_eq!(unsafe { eh_soft_hinge_eval(beta, tau, s, i as f64, &mut v) }, EhStatus::Ok);
            v
        })
        .collect()
}

#[test]
fn soft_hinge_round_trip_through_fit() {
    let xs: Vec<f64> = (0..101).map(|i| 0.5 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| 0.8 * eh_softplus((x - 18.0) / 6.0)).collect();
    let opts = EhFitOptions { seed: 42, n_starts: 0, max_iters: 0 };
    let mut fit = ptr::null_mut();
    unsafe {
        assert_eq!(eh_fit(xs.as_ptr(), ys.as_ptr(), xs.len(), EhModelKind::SoftHinge, &opts, &mut fit), EhStatus::Ok);
        let mut len = 0;
        assert_eq!(eh_fit_params(fit, ptr::null_mut(), 0, &mut len), EhStatus::BufferTooSmall);
        assert_eq!(len, 3);
        let mut p = [0.0; 3];
        assert_eq!(eh_fit_params(fit, p.as_mut_ptr(), 3, &mut len), EhStatus::Ok);
        assert!((p[0] - 0.8).abs() < 1e-4 && (p[1] - 18.0).abs() < 1e-4 && (p[2] - 6.0).abs() < 1e-4, "{p:?}");
        let mut s = std::mem::zeroed::<EhFitSummary>();
        assert_eq!(eh_fit_summary(fit, &mut s), EhStatus::Ok);
        assert_eq!(s.kind, EhModelKind::SoftHinge);
        assert_eq!((s.n_points, s.n_params), (101, 3));
        assert!(s.sse < 1e-10);
        let mut v = 0.0;
        assert_eq!(eh_fit_eval(fit, 30.0, &mut v), EhStatus::Ok);
        assert!((v - ys[60]).abs() < 1e-5);
        eh_fit_free(fit);
    }
}

#[test]
fn fits_repeat_for_the_same_seed() {
    let xs: Vec<f64> = (0..60).map(|i| 0.8 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().enumerate().map(|(i, &x)| (0.3 * (x - 15.0).max(0.0) + (i % 3) as f64 * 0.2).min(x)).collect();
    let opts = EhFitOptions { seed: 7, n_starts: 5, max_iters: 100 };
    let run = || unsafe {
        let mut fit = ptr::null_mut();
        assert_eq!(eh_fit(xs.as_ptr(), ys.as_ptr(), xs.len(), EhModelKind::SoftHinge, &opts, &mut fit), EhStatus::Ok);
        let mut p = [0.0; 3];
        eh_fit_params(fit, p.as_mut_ptr(), 3, ptr::null_mut());
        eh_fit_free(fit);
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn fit_errors_leave_a_null_handle_and_a_message() {
    let xs = [1.0];
    let ys = [0.5];
    let mut fit = ptr::NonNull::<EhFit>::dangling().as_ptr();
    unsafe {
        let st = eh_fit(xs.as_ptr(), ys.as_ptr(), 0, EhModelKind::SoftHinge, ptr::null(), &mut fit);
        assert_eq!(st, EhStatus::Fit);
        assert!(fit.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(eh_fit(ptr::null(), ys.as_ptr(), 1, EhModelKind::Linear, ptr::null(), &mut fit), EhStatus::NullPointer);
        let nan = [f64::NAN, 1.0, 2.0];
        assert_eq!(eh_fit(nan.as_ptr(), nan.as_ptr(), 3, EhModelKind::Linear, ptr::null(), &mut fit), EhStatus::InvalidArgument);
        eh_fit_free(ptr::null_mut());
    }
}

#[test]
fn spectrum_handles() {
    let params: Vec<f64> = (0..12).flat_map(|i| [0.2 + 0.06 * i as f64, 10.0 + (i % 5) as f64 * 4.0, 5.0]).collect();
    let mut sp = ptr::null_mut();
    unsafe {
        assert_eq!(eh_spectrum_fit(params.as_ptr(), 12, 2, &mut sp), EhStatus::Ok);
        assert_eq!(eh_spectrum_n_components(sp), 2);
        let mut ev = [0.0; 2];
        let mut len = 0;
        assert_eq!(eh_spectrum_eigenvalues(sp, ev.as_mut_ptr(), 2, &mut len), EhStatus::Ok);
        assert!(ev[0] >= ev[1] && ev[1] >= 0.0);
        let mut ratio = [0.0; 2];
        assert_eq!(eh_spectrum_explained(sp, ratio.as_mut_ptr(), 2, &mut len), EhStatus::Ok);
        assert!(ratio.iter().sum::<f64>() <= 1.0 + 1e-12);

        let n = eh_grid_len();
        let mut mean = vec![0.0; n];
        assert_eq!(eh_spectrum_mean(sp, mean.as_mut_ptr(), n, &mut len), EhStatus::Ok);
        let mut phi = vec![0.0; n];
        assert_eq!(eh_spectrum_component(sp, 0, phi.as_mut_ptr(), n, &mut len), EhStatus::Ok);
        assert_eq!(len, n);
        let norm: f64 = phi.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(eh_spectrum_component(sp, 5, phi.as_mut_ptr(), n, &mut len), EhStatus::InvalidArgument);

        // The mean curve scores zero and sits mid-pack.
        let mut scores = [1.0; 2];
        let mut pct = -1.0;
        assert_eq!(eh_spectrum_project(sp, mean.as_ptr(), n, scores.as_mut_ptr(), 2, &mut pct), EhStatus::Ok);
        assert!(scores.iter().all(|s| s.abs() < 1e-9), "{scores:?}");
        assert!((0.0..=100.0).contains(&pct));

        let c = curve(0.5, 20.0, 5.0);
        assert_eq!(eh_spectrum_project(sp, c.as_ptr(), n - 1, scores.as_mut_ptr(), 2, ptr::null_mut()), EhStatus::GridMismatch);
        assert_eq!(eh_spectrum_project(sp, c.as_ptr(), n, scores.as_mut_ptr(), 1, ptr::null_mut()), EhStatus::BufferTooSmall);
        eh_spectrum_free(sp);

        assert_eq!(eh_spectrum_fit(params.as_ptr(), 1, 1, &mut sp), EhStatus::TooFewCurves);
        assert!(sp.is_null());
    }
}

#[test]
fn percentile_and_version() {
    let r = [3.0, 1.0, 2.0, 5.0, 4.0];
    let mut p = 0.0;
    unsafe {
        assert_eq!(eh_percentile(3.5, r.as_ptr(), r.len(), &mut p), EhStatus::Ok);
        assert_eq!(p, 62.5);
        assert_eq!(eh_percentile(3.5, r.as_ptr(), 0, &mut p), EhStatus::InvalidArgument);
        assert!(!CStr::from_ptr(eh_version()).to_bytes().is_empty());
    }
    assert_eq!(eh_softplus(0.0), std::f64::consts::LN_2);
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/eyehead.h")).unwrap();
    for name in [
        "eh_fit(", "eh_fit_free(", "eh_spectrum_fit(", "eh_spectrum_project(", "eh_spectrum_free(",
        "eh_percentile(", "eh_last_error(", "typedef struct EhFit EhFit", "EH_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping header compile check");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"eyehead.h\"\nint main(void) { EhFit *f = NULL; EhStatus s = eh_fit(NULL, NULL, 0, EH_MODEL_KIND_SOFT_HINGE, NULL, &f); eh_fit_free(f); return s == EH_STATUS_OK; }\n",
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
