//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{RdreamError, Result};

/// Symmetric eigendecomposition with eigenvalues sorted descending and the
/// eigenvector columns permuted to match.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = symmetrize(m);
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or(RdreamError::EigenFailure)?;
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sample mean of each column.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance with denominator n - 1.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (x.nrows() as f64 - 1.0).max(1.0);
    symmetrize(&(centered.transpose() * &centered / denom))
}

/// Solves a symmetric positive semi-definite system with a relative ridge
/// `ridge * trace / dim` added to the diagonal. Falls back to an SVD
/// pseudo-inverse if Cholesky fails.
pub fn solve_spd_ridge(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let dim = a.nrows();
    let mut a = symmetrize(a);
    let shift = ridge * a.trace().abs() / dim as f64;
    for i in 0..dim {
        a[(i, i)] += shift;
    }
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * dim as f64;
    svd.solve(b, tol).ok()
}

/// Minimum-norm least-squares solution via SVD.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, tol).ok()
}

/// Ratio of the smallest to largest singular value (0 for a zero matrix).
pub fn inverse_condition(a: &DMatrix<f64>) -> f64 {
    let s = a.singular_values();
    let max = s.max();
    if max <= 0.0 {
        0.0
    } else {
        s.min() / max
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
