//! Proximal operators and the SVD they ride on.
//!
//! The singular value decomposition is a one-sided Jacobi iteration running in
//! f64 whatever the storage scalar is; matrices here are pixels-by-frames
//! views whose short side is a couple dozen columns, so the cyclic sweep
//! converges in a handful of passes and no truncated/randomized machinery is
//! warranted.

use crate::error::{CoreError, Result};
use crate::real::Real;
use ndarray::{Array1, Array2, ArrayView2, Axis, Dimension};

/// Thin SVD `A = U diag(s) V^T` with `U: m x k`, `s: k`, `V: n x k`,
/// `k = min(m, n)`, singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

/// Relative off-diagonal tolerance for the Jacobi sweep.
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided Jacobi SVD in f64. Orients the problem so rotations act on the
/// short side; deterministic given the input.
pub fn svd_jacobi(a: ArrayView2<f64>) -> Svd {
    let (m, n) = a.dim();
    if m < n {
        let t = svd_jacobi(a.t().as_standard_layout().view());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }

    // Columns of b are orthogonalized in place; v accumulates the rotations.
    let mut b = a.to_owned();
    let mut v = Array2::<f64>::eye(n);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let bp = b[[i, p]];
                    let bq = b[[i, q]];
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b[[i, p]];
                    let bq = b[[i, q]];
                    b[[i, p]] = c * bp - s * bq;
                    b[[i, q]] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut s = Array1::<f64>::zeros(n);
    let mut u = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        let norm: f64 = b.column(j).iter().map(|x| x * x).sum::<f64>().sqrt();
        s[j] = norm;
        if norm > 0.0 {
            for i in 0..m {
                u[[i, j]] = b[[i, j]] / norm;
            }
        }
    }

    // Sort descending by singular value.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let s_sorted = Array1::from_iter(order.iter().map(|&j| s[j]));
    let u_sorted = u.select(Axis(1), &order);
    let v_sorted = v.select(Axis(1), &order);

    Svd {
        u: u_sorted,
        s: s_sorted,
        v: v_sorted,
    }
}

/// Forward state kept for [`svt_backward`].
#[derive(Debug, Clone)]
pub struct SvtCache {
    pub svd: Svd,
    pub tau: f64,
    /// Smallest relative gap between consecutive singular values fell below
    /// the damping threshold; the backward pass used the damped differential.
    pub degenerate_spectrum: bool,
}

/// Relative spectral-gap threshold below which the SVD differential is damped.
const SVT_DAMPING: f64 = 1e-6;

/// Singular value thresholding: the proximal operator of `tau * ||X||_*`.
///
/// Ties at `sigma == tau` map to zero (closed dead zone).
pub fn svt<T: Real>(m: &Array2<T>, tau: T) -> Result<Array2<T>> {
    Ok(svt_cached(m, tau)?.0)
}

/// As [`svt`], additionally returning the cache needed by the backward pass.
pub fn svt_cached<T: Real>(m: &Array2<T>, tau: T) -> Result<(Array2<T>, SvtCache)> {
    if tau < T::zero() {
        return Err(CoreError::Contract(format!(
            "svt threshold must be nonnegative, got {tau}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("svt input has non-finite entries".into()));
    }
    let a = m.mapv(|v| v.acc());
    let svd = svd_jacobi(a.view());
    let tau_f = tau.acc();
    let k = svd.s.len();

    let s_max = if k > 0 { svd.s[0] } else { 0.0 };
    let mut degenerate = false;
    for i in 1..k {
        if (svd.s[i - 1] - svd.s[i]).abs() < SVT_DAMPING * s_max {
            degenerate = true;
            break;
        }
    }

    let (mm, n) = m.dim();
    let mut out = Array2::<f64>::zeros((mm, n));
    for j in 0..k {
        let g = (svd.s[j] - tau_f).max(0.0);
        if g == 0.0 {
            continue;
        }
        let u_col = svd.u.column(j);
        let v_col = svd.v.column(j);
        for r in 0..mm {
            let ug = u_col[r] * g;
            for c in 0..n {
                out[[r, c]] += ug * v_col[c];
            }
        }
    }
    let cache = SvtCache {
        svd,
        tau: tau_f,
        degenerate_spectrum: degenerate,
    };
    Ok((out.mapv(T::from_acc), cache))
}

/// Gradients of `Y = svt(M, tau)` with respect to `M` and `tau`, given the
/// upstream gradient on `Y`. Uses the standard SVD differential; reciprocal
/// spectral gaps and inverse singular values are damped near degeneracy.
pub fn svt_backward<T: Real>(grad_out: &Array2<T>, cache: &SvtCache) -> (Array2<T>, T) {
    let gy = grad_out.mapv(|v| v.acc());
    let u = &cache.svd.u;
    let s = &cache.svd.s;
    let v = &cache.svd.v;
    let tau = cache.tau;
    let (m, k) = u.dim();
    let n = v.dim().0;

    let s_max = if k > 0 { s[0] } else { 0.0 };
    let damp_gap = SVT_DAMPING * (s_max * s_max).max(f64::MIN_POSITIVE);
    let damp_inv = SVT_DAMPING * s_max.max(f64::MIN_POSITIVE);

    let shrunk: Vec<f64> = s.iter().map(|&x| (x - tau).max(0.0)).collect();
    let active: Vec<bool> = s.iter().map(|&x| x > tau).collect();

    // u_bar = gy . v . diag(shrunk), v_bar = gy^T . u . diag(shrunk)
    let mut u_bar = gy.dot(v);
    for ((_, j), e) in u_bar.indexed_iter_mut() {
        *e *= shrunk[j];
    }
    let mut v_bar = gy.t().dot(u);
    for ((_, j), e) in v_bar.indexed_iter_mut() {
        *e *= shrunk[j];
    }

    let p = u.t().dot(&gy).dot(v); // k x k core projection of the upstream grad

    // Bracket term: F∘(U^T Ub − Ub^T U)·Σ + Σ·(F∘(V^T Vb − Vb^T V)) + diag(σ̄)
    let utu = u.t().dot(&u_bar);
    let vtv = v.t().dot(&v_bar);
    let mut bracket = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            if i == j {
                if active[i] {
                    bracket[[i, i]] += p[[i, i]];
                }
                continue;
            }
            let d = s[j] * s[j] - s[i] * s[i];
            let f = d / (d * d + damp_gap * damp_gap);
            let a = (utu[[i, j]] - utu[[j, i]]) * s[j];
            let b = s[i] * (vtv[[i, j]] - vtv[[j, i]]);
            bracket[[i, j]] = f * (a + b);
        }
    }

    let mut grad = u.dot(&bracket).dot(&v.t());

    // (I − U U^T) · Ub · Σ^{-1} · V^T
    let sinv: Vec<f64> = s.iter().map(|&x| x / (x * x + damp_inv * damp_inv)).collect();
    let mut ub_sinv = u_bar.clone();
    for ((_, j), e) in ub_sinv.indexed_iter_mut() {
        *e *= sinv[j];
    }
    let proj_u = ub_sinv.clone() - u.dot(&u.t().dot(&ub_sinv));
    grad = grad + proj_u.dot(&v.t());

    // U · Σ^{-1} · Vb^T · (I − V V^T)
    let mut vb_sinv = v_bar.clone();
    for ((_, j), e) in vb_sinv.indexed_iter_mut() {
        *e *= sinv[j];
    }
    let proj_v = vb_sinv.clone() - v.dot(&v.t().dot(&vb_sinv));
    grad = grad + u.dot(&proj_v.t());

    debug_assert_eq!(grad.dim(), (m, n));

    // d svt / d tau = −Σ_{active} u_i v_i^T
    let mut tau_grad = 0.0;
    for i in 0..k {
        if active[i] {
            tau_grad -= p[[i, i]];
        }
    }

    (grad.mapv(T::from_acc), T::from_acc(tau_grad))
}

/// Elementwise soft-thresholding `sign(x) * max(|x| - tau, 0)`.
pub fn soft_threshold<T: Real, D: Dimension>(
    x: &ndarray::Array<T, D>,
    tau: T,
) -> ndarray::Array<T, D> {
    x.mapv(|v| {
        let shrunk = v.abs() - tau;
        if shrunk > T::zero() {
            shrunk * v.signum()
        } else {
            T::zero()
        }
    })
}

/// Row-group shrinkage: the proximal operator of `tau * Σ_rows ||row||_2`.
/// Each row (a pixel trajectory) is scaled by `max(0, 1 - tau/||row||)`;
/// zero rows stay zero.
pub fn row_group_shrink<T: Real>(s: &Array2<T>, tau: T) -> Array2<T> {
    let tau_f = tau.acc();
    let mut out = s.clone();
    for mut row in out.rows_mut() {
        let norm: f64 = row.iter().map(|v| v.acc() * v.acc()).sum::<f64>().sqrt();
        if norm <= tau_f {
            row.fill(T::zero());
        } else {
            let scale = T::from_acc(1.0 - tau_f / norm);
            row.mapv_inplace(|v| v * scale);
        }
    }
    out
}

/// Gradients of `Y = row_group_shrink(S, tau)` with respect to `S` and `tau`.
pub fn row_group_shrink_backward<T: Real>(
    grad_out: &Array2<T>,
    input: &Array2<T>,
    tau: T,
) -> (Array2<T>, T) {
    let tau_f = tau.acc();
    let (rows, cols) = input.dim();
    let mut grad = Array2::<T>::zeros((rows, cols));
    let mut tau_grad = 0.0;
    for r in 0..rows {
        let row = input.row(r);
        let norm: f64 = row.iter().map(|v| v.acc() * v.acc()).sum::<f64>().sqrt();
        if norm <= tau_f {
            continue;
        }
        let gy = grad_out.row(r);
        let dot: f64 = row
            .iter()
            .zip(gy.iter())
            .map(|(a, b)| a.acc() * b.acc())
            .sum();
        let scale = 1.0 - tau_f / norm;
        let radial = tau_f / (norm * norm * norm);
        for c in 0..cols {
            grad[[r, c]] =
                T::from_acc(scale * gy[c].acc() + radial * row[c].acc() * dot);
        }
        tau_grad -= dot / norm;
    }
    (grad, T::from_acc(tau_grad))
}

/// Frobenius norm with f64 accumulation.
pub fn frobenius_norm<T: Real, D: Dimension>(x: &ndarray::Array<T, D>) -> f64 {
    x.iter().map(|v| v.acc() * v.acc()).sum::<f64>().sqrt()
}

/// Nuclear norm (sum of singular values) with f64 accumulation.
pub fn nuclear_norm<T: Real>(x: &Array2<T>) -> f64 {
    let a = x.mapv(|v| v.acc());
    svd_jacobi(a.view()).s.sum()
}

/// Sum of the l2 norms of the rows (mixed l1,2 norm).
pub fn row_group_norm<T: Real>(x: &Array2<T>) -> f64 {
    x.rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.acc() * v.acc()).sum::<f64>().sqrt())
        .sum()
}
