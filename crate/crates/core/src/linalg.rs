//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Apply a scalar function to the spectrum of a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&v| f(v)));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// (A + A')/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    nalgebra::SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Largest singular value of an arbitrary matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v))
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solve a symmetric positive definite system, falling back to a ridge.
///
/// Returns the solution and the ridge actually used (0 when none).
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Result<(DVector<f64>, f64)> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch.solve(rhs), 0.0));
    }
    let bumped = m + DMatrix::identity(m.nrows(), m.ncols()) * ridge;
    bumped
        .cholesky()
        .map(|ch| (ch.solve(rhs), ridge))
        .ok_or_else(|| Error::Degenerate("matrix not positive definite after ridge".into()))
}

/// Inverse of a symmetric positive definite matrix with ridge fallback.
pub fn spd_inverse(m: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, f64)> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch.inverse(), 0.0));
    }
    let bumped = m + DMatrix::identity(m.nrows(), m.ncols()) * ridge;
    bumped
        .cholesky()
        .map(|ch| (ch.inverse(), ridge))
        .ok_or_else(|| Error::Degenerate("matrix not positive definite after ridge".into()))
}

/// Relative-error norm d^{-1/2} ‖S^{-1/2} Ŝ S^{-1/2} − I‖_F against a PD target S.
pub fn relative_frobenius(estimate: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<f64> {
    let d = target.nrows();
    let (vals, _) = sym_eigen_desc(target);
    if vals[d - 1] <= 0.0 {
        return Err(Error::Degenerate("target matrix is not positive definite".into()));
    }
    let w = sym_apply(target, |v| 1.0 / v.sqrt());
    let rel = &w * estimate * &w - DMatrix::<f64>::identity(d, d);
    Ok(rel.norm() / (d as f64).sqrt())
}
