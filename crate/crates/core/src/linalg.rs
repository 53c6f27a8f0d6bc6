//! Dense linear-algebra helpers bridging `ndarray` storage and the SVD, QR
//! and Cholesky routines of `faer`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView2};

pub(crate) fn to_faer(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_faer(m: faer::MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD `a = U diag(s) Vᵀ`, singular values in non-increasing order.
pub struct Svd {
    pub u: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub v_t: Array2<f64>,
}

pub fn svd(a: ArrayView2<'_, f64>) -> Svd {
    let m = to_faer(a);
    let svd = m.thin_svd().expect("SVD of a finite matrix converges");
    let s = svd.S().column_vector();
    Svd {
        u: from_faer(svd.U()),
        singular_values: Array1::from_iter((0..s.nrows()).map(|i| s[i])),
        v_t: from_faer(svd.V().transpose()),
    }
}

pub fn singular_values(a: ArrayView2<'_, f64>) -> Array1<f64> {
    let s = to_faer(a)
        .singular_values()
        .expect("SVD of a finite matrix converges");
    Array1::from_vec(s)
}

/// Largest singular value.
pub fn spectral_norm(a: ArrayView2<'_, f64>) -> f64 {
    singular_values(a).iter().fold(0.0f64, |m, &s| m.max(s))
}

/// Moore-Penrose pseudo-inverse with the usual relative cutoff
/// `max(m, n) · ε · σ_max`.
pub fn pseudo_inverse(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let (r, c) = a.dim();
    let Svd {
        u,
        singular_values,
        v_t,
    } = svd(a);
    let smax = singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let cutoff = (r.max(c) as f64) * f64::EPSILON * smax;
    // A⁺ = V diag(1/s) Uᵀ over the singular values above the cutoff
    let mut vt_scaled = v_t;
    for (mut row, &s) in vt_scaled.rows_mut().into_iter().zip(singular_values.iter()) {
        if s > cutoff {
            row /= s;
        } else {
            row.fill(0.0);
        }
    }
    vt_scaled.t().dot(&u.t())
}

/// Solves the symmetric positive-definite system `a x = b` by Cholesky.
/// Returns `None` when `a` is not numerically positive definite, including
/// the case where the factorization succeeds but its pivots span more than
/// `1 / (n ε)` in magnitude.
pub fn cholesky_solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let llt = to_faer(a).llt(Side::Lower).ok()?;
    let l = llt.L();
    let n = l.nrows();
    let (lo, hi) = (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        let p = l[(i, i)] * l[(i, i)];
        (lo.min(p), hi.max(p))
    });
    if n > 0 && !(lo > hi * n as f64 * f64::EPSILON) {
        return None;
    }
    let x = from_faer(llt.solve(to_faer(b)).as_ref());
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Q factor of a square matrix's QR decomposition, with column signs chosen
/// so that `R` has a non-negative diagonal.
pub(crate) fn qr_q(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let qr = to_faer(a).qr();
    let r = qr.R();
    let mut q = from_faer(qr.compute_Q().as_ref());
    for j in 0..r.nrows().min(r.ncols()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).mapv_inplace(|v| -v);
        }
    }
    q
}

/// Largest absolute entry.
pub fn max_abs(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn svd_reconstructs() {
        let a = array![[3.0, 1.0, 0.5], [0.0, 2.0, -1.0], [1.0, 1.0, 1.0]];
        let s = svd(a.view());
        let rec = s.u.dot(&Array2::from_diag(&s.singular_values)).dot(&s.v_t);
        assert!(max_abs((&rec - &a).view()) < 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let p = pseudo_inverse(a.view());
        // A A⁺ A = A
        let back = a.dot(&p).dot(&a);
        assert!(max_abs((&back - &a).view()) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![[1.0], [1.0]];
        assert!(cholesky_solve(a.view(), b.view()).is_none());
        let spd = array![[4.0, 1.0], [1.0, 3.0]];
        let x = cholesky_solve(spd.view(), b.view()).unwrap();
        assert!(max_abs((&spd.dot(&x) - &b).view()) < 1e-14);
    }

    #[test]
    fn svd_handles_repeated_singular_values() {
        // an orthogonal matrix with one direction stretched: five singular
        // values equal to one
        let mut m = qr_q(
            Array2::from_shape_fn((6, 6), |(i, j)| ((i * 7 + j * 3) as f64).sin()).view(),
        );
        m[[0, 0]] += 1e-3;
        let s = svd(m.view());
        let rec = s.u.dot(&Array2::from_diag(&s.singular_values)).dot(&s.v_t);
        assert!(max_abs((&rec - &m).view()) < 1e-13);
    }

    #[test]
    fn spectral_norm_of_diag() {
        assert!((spectral_norm(array![[2.0, 0.0], [0.0, -3.0]].view()) - 3.0).abs() < 1e-14);
    }
}
