//! Robust PCA via the inexact augmented Lagrangian method: alternating
//! singular-value thresholding and entrywise soft thresholding.

use nalgebra::DMatrix;

use crate::tilt::TiltParams;

/// Result of a robust PCA decomposition `D ≈ A + E`.
#[derive(Debug, Clone)]
pub struct RpcaResult {
    /// Low-rank component.
    pub low_rank: DMatrix<f64>,
    /// Sparse component.
    pub sparse: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final relaxed objective `‖A‖_* + λ‖E‖₁`.
    pub objective: f64,
}

/// Entrywise soft threshold.
pub fn soft_threshold(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    m.map(|v| {
        if v > tau {
            v - tau
        } else if v < -tau {
            v + tau
        } else {
            0.0
        }
    })
}

/// Singular-value thresholding: shrink singular values by `tau`.
/// Returns the thresholded matrix and its nuclear norm.
pub fn singular_value_threshold(m: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut nuclear = 0.0;
    let sv: alloc::vec::Vec<f64> = svd
        .singular_values
        .iter()
        .map(|s| {
            let t = (s - tau).max(0.0);
            nuclear += t;
            t
        })
        .collect();
    let k = sv.len();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, s) in sv.iter().enumerate().take(k) {
        if *s > 0.0 {
            // rank-1 update u_i * s * v_i^T
            let ui = u.column(i);
            let vi = vt.row(i);
            for c in 0..m.ncols() {
                let sv_c = s * vi[c];
                for r in 0..m.nrows() {
                    out[(r, c)] += ui[r] * sv_c;
                }
            }
        }
    }
    (out, nuclear)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Number of singular values above `rel_tol` times the largest one.
/// An all-zero matrix has rank 0.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let s0 = sv.max();
    if s0 <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * s0).count()
}

/// Decompose `D = A + E` with `A` low rank and `E` sparse by approximately
/// minimizing `‖A‖_* + λ‖E‖₁` subject to `D = A + E`.
pub fn rpca_alm(d: &DMatrix<f64>, lambda: f64, params: &TiltParams) -> RpcaResult {
    let d_norm = d.norm();
    if d_norm <= 0.0 {
        return RpcaResult {
            low_rank: DMatrix::zeros(d.nrows(), d.ncols()),
            sparse: DMatrix::zeros(d.nrows(), d.ncols()),
            iterations: 0,
            converged: true,
            objective: 0.0,
        };
    }
    let spec = spectral_norm(d);
    let d_inf = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    // standard inexact-ALM dual initialization
    let scale = spec.max(d_inf / lambda);
    let mut y = d / scale;
    let mut mu = params.mu_init / spec.max(1e-12);
    let mu_max = mu * 1e7;
    let mut a = DMatrix::zeros(d.nrows(), d.ncols());
    let mut e = DMatrix::zeros(d.nrows(), d.ncols());
    let mut converged = false;
    let mut iterations = 0;
    let mut nuclear = 0.0;
    for iter in 1..=params.inner_max_iter {
        iterations = iter;
        let ge = d - &a + &y / mu;
        e = soft_threshold(&ge, lambda / mu);
        let ga = d - &e + &y / mu;
        let (a_new, nn) = singular_value_threshold(&ga, 1.0 / mu);
        a = a_new;
        nuclear = nn;
        let residual = d - &a - &e;
        let rel = residual.norm() / d_norm;
        y += &residual * mu;
        mu = (mu * params.mu_growth).min(mu_max);
        if rel < params.inner_tol {
            converged = true;
            break;
        }
    }
    let l1: f64 = e.iter().map(|v| v.abs()).sum();
    RpcaResult {
        low_rank: a,
        sparse: e,
        iterations,
        converged,
        objective: nuclear + lambda * l1,
    }
}

/// Standard RPCA weight `1/sqrt(max(m, n))`.
pub fn default_lambda(rows: usize, cols: usize) -> f64 {
    1.0 / libm::sqrt(rows.max(cols) as f64)
}
