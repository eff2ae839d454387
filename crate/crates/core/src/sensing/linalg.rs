//! Projection energies and least squares on tall complex systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

type C = Complex64;

/// Singular values below `RANK_EPS · σ_max` are treated as zero.
pub const RANK_EPS: f64 = 1e-9;
/// Gram matrices with a larger condition estimate take the SVD route.
pub const COND_LIMIT: f64 = 1e8;

/// In-place Cholesky of a Hermitian `n × n` row-major matrix (lower part
/// used). Returns the condition estimate `(max Lᵢᵢ / min Lᵢᵢ)²`, or `None`
/// when a pivot is not positive.
pub(crate) fn cholesky_in_place(a: &mut [C], n: usize) -> Option<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let l = d.sqrt();
        a[j * n + j] = C::new(l, 0.0);
        lo = lo.min(l);
        hi = hi.max(l);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s / l;
        }
    }
    Some((hi / lo).powi(2))
}

/// `rhsᴴ G⁻¹ rhs` through the Cholesky factor `L`: `‖L⁻¹ rhs‖²`.
pub(crate) fn quad_form_from_factor(l: &[C], n: usize, rhs: &mut [C]) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[i * n + k] * rhs[k];
        }
        s /= l[i * n + i].re;
        rhs[i] = s;
        acc += s.norm_sqr();
    }
    acc
}

/// Projection energy from the normal equations, `None` when the Gram matrix
/// is too poorly conditioned for Cholesky.
pub(crate) fn gram_energy(gram: &mut [C], n: usize, rhs: &mut [C]) -> Option<f64> {
    match cholesky_in_place(gram, n) {
        Some(cond) if cond < COND_LIMIT => Some(quad_form_from_factor(gram, n, rhs)),
        _ => None,
    }
}

/// Orthonormal basis of the numerical column space of `d`.
pub fn column_basis(d: &DMatrix<C>) -> DMatrix<C> {
    let svd = d.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| smax > 0.0 && svd.singular_values[i] > RANK_EPS * smax).collect();
    DMatrix::from_fn(d.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

pub fn numerical_rank(d: &DMatrix<C>) -> usize {
    let sv = d.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_EPS * smax).count()
}

fn svd_energy(d: &DMatrix<C>, y: &DVector<C>) -> f64 {
    let u = column_basis(d);
    (u.adjoint() * y).norm_squared()
}

/// `‖P_D y‖²` with `P_D` the orthogonal projector onto `col(D)`.
pub fn projection_energy(d: &DMatrix<C>, y: &DVector<C>) -> f64 {
    let n = d.ncols();
    let g = d.adjoint() * d;
    let r = d.adjoint() * y;
    let mut gram: Vec<C> = (0..n * n).map(|k| g[(k / n, k % n)]).collect();
    let mut rhs: Vec<C> = r.iter().copied().collect();
    gram_energy(&mut gram, n, &mut rhs).unwrap_or_else(|| svd_energy(d, y))
}

/// Least-squares solution `D† y`, via normal equations when well conditioned
/// and the truncated SVD pseudo-inverse otherwise.
pub fn least_squares(d: &DMatrix<C>, y: &DVector<C>) -> Result<DVector<C>> {
    if d.iter().all(|z| *z == C::new(0.0, 0.0)) {
        return Err(Error::RankDeficient("response matrix is identically zero".into()));
    }
    let g = d.adjoint() * d;
    if let Some(ch) = g.clone().cholesky() {
        let l = ch.l();
        let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].re).collect();
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        if (hi / lo).powi(2) < COND_LIMIT {
            return Ok(ch.solve(&(d.adjoint() * y)));
        }
    }
    let svd = d.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(y, RANK_EPS * smax).map_err(|e| Error::RankDeficient(e.to_string()))
}
