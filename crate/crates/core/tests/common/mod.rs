//! Independent reference routines shared by the integration tests.

#![allow(dead_code)]

use eyehead::events::ShiftSet;

/// `ln(1 + e^z)` written out directly, for moderate `z` only.
pub fn naive_softplus(z: f64) -> f64 {
    (1.0 + z.exp()).ln()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct LatticeMin {
    pub sse: f64,
    pub beta: f64,
    pub tau: f64,
    pub s: f64,
}

/// Exhaustive soft-hinge SSE minimum over an `n x n x n` lattice spanning
/// β ∈ [0, 1], τ ∈ [0, 50], s ∈ [0.5, 20].
///
/// For fixed (τ, s) the SSE is a quadratic in β, so each β node is evaluated
/// exactly from three sums instead of re-sweeping the data.
pub fn lattice_min(data: &ShiftSet, n: usize) -> LatticeMin {
    let (xs, ys) = (data.xs(), data.ys());
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let betas = linspace(0.0, 1.0, n);
    let mut best = LatticeMin { sse: f64::INFINITY, beta: f64::NAN, tau: f64::NAN, s: f64::NAN };
    for &tau in &linspace(0.0, 50.0, n) {
        for &s in &linspace(0.5, 20.0, n) {
            let (mut syg, mut sgg) = (0.0, 0.0);
            for (x, y) in xs.iter().zip(&ys) {
                let z = (x - tau) / s;
                let g = if z > 30.0 { z } else { naive_softplus(z) };
                syg += y * g;
                sgg += g * g;
            }
            for &beta in &betas {
                let sse = syy - 2.0 * beta * syg + beta * beta * sgg;
                if sse < best.sse {
                    best = LatticeMin { sse, beta, tau, s };
                }
            }
        }
    }
    best
}

/// SSE of a soft hinge on a data set, computed term by term.
pub fn soft_hinge_sse(data: &ShiftSet, beta: f64, tau: f64, s: f64) -> f64 {
    data.shifts
        .iter()
        .map(|p| {
            let z = (p.x - tau) / s;
            let g = if z > 30.0 { z } else { naive_softplus(z) };
            (p.y - beta * g).powi(2)
        })
        .sum()
}
