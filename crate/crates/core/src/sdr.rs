//! Sufficient dimension reduction: OPG and DEE candidate matrices, ridge-ratio
//! selection of the structural dimension, and eigenvector extraction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardization_of, Dataset};
use crate::error::{RdreamError, Result};
use crate::kernel::product_kernel;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SdrMethod {
    Opg,
    Dee,
}

impl SdrMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SdrMethod::Opg => "OPG",
            SdrMethod::Dee => "DEE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrResult {
    pub method: SdrMethod,
    /// Σ̂ (OPG) or 𝓜ₙ,ₙ (DEE) on the original covariate scale.
    pub candidate: DMatrix<f64>,
    /// Descending, clipped at zero.
    pub eigenvalues: DVector<f64>,
    pub q_hat: usize,
    /// p × q_hat, orthonormal columns.
    pub b_hat: DMatrix<f64>,
    /// Reference bandwidth used in the ridge c = 1/√(n·h_ref).
    pub h_ref: f64,
    pub ridge_c: f64,
    /// OPG pre-fit bandwidth (before any per-anchor inflation).
    pub prefit_bandwidth: Option<f64>,
}

/// Pre-fit bandwidth for the OPG local linear fits on standardized covariates.
pub fn opg_prefit_bandwidth(n: usize, p: usize) -> f64 {
    2.34 * GAUSSIAN_TO_QUARTIC * (n as f64).powf(-1.0 / (p as f64 + 6.0))
}

/// Ratio of canonical bandwidths (R(K)/μ₂(K)²)^(1/5), quartic over
/// Gaussian: (35·2√π)^(1/5). The 2.34 constant is stated for a Gaussian
/// kernel.
pub const GAUSSIAN_TO_QUARTIC: f64 = 2.622_615_328_826_102;

const OPG_RIDGE: f64 = 1e-8;
const OPG_INFLATION: f64 = 1.5;
const OPG_MAX_INFLATIONS: usize = 4;

/// Σ̂ = (1/n) Σⱼ b̂ⱼ b̂ⱼᵀ with the default pre-fit bandwidth.
pub fn opg_matrix(d: &Dataset) -> Result<DMatrix<f64>> {
    opg_matrix_with_bandwidth(d, opg_prefit_bandwidth(d.n(), d.p()))
}

/// OPG candidate matrix with an explicit pre-fit bandwidth `h0`.
///
/// Each anchor j solves the kernel-weighted least squares of y on
/// (1, zᵢ − zⱼ) in standardized coordinates z; anchors with fewer than
/// p + 2 points in the window have their bandwidth inflated by 1.5, at most
/// four times.
pub fn opg_matrix_with_bandwidth(d: &Dataset, h0: f64) -> Result<DMatrix<f64>> {
    if !(h0 > 0.0) {
        return Err(RdreamError::DegenerateBandwidth(h0));
    }
    let n = d.n();
    let p = d.p();
    if n <= p + 1 {
        return Err(RdreamError::TooFewObservations(n));
    }
    let info = standardization_of(d.x())?;
    let z = info.apply(d.x());
    let y = d.y();

    let gradients: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| local_gradient(&z, y, j, h0))
        .collect();

    let mut sigma_z = DMatrix::zeros(p, p);
    for g in gradients {
        let b = g?;
        sigma_z += &b * b.transpose();
    }
    sigma_z /= n as f64;
    let a = &info.cov_inv_sqrt;
    Ok(linalg::symmetrize(&(a * sigma_z * a)))
}

fn local_gradient(z: &DMatrix<f64>, y: &DVector<f64>, j: usize, h0: f64) -> Result<DVector<f64>> {
    let n = z.nrows();
    let p = z.ncols();
    let mut h = h0;
    let mut diff = vec![0.0; p];
    for _ in 0..=OPG_MAX_INFLATIONS {
        let mut xtwx = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut xtwy = DVector::<f64>::zeros(p + 1);
        let mut support = 0usize;
        let mut row = vec![0.0; p + 1];
        for i in 0..n {
            for c in 0..p {
                diff[c] = (z[(i, c)] - z[(j, c)]) / h;
            }
            let w = product_kernel(&diff);
            if w == 0.0 {
                continue;
            }
            support += 1;
            row[0] = 1.0;
            for c in 0..p {
                row[c + 1] = z[(i, c)] - z[(j, c)];
            }
            for r in 0..=p {
                let wr = w * row[r];
                xtwy[r] += wr * y[i];
                for c in 0..=p {
                    xtwx[(r, c)] += wr * row[c];
                }
            }
        }
        if support >= p + 2 {
            let coef = linalg::solve_spd_ridge(&xtwx, &xtwy, OPG_RIDGE)
                .ok_or(RdreamError::SingularLocalFit(j))?;
            return Ok(coef.rows(1, p).into_owned());
        }
        h *= OPG_INFLATION;
    }
    Err(RdreamError::SingularLocalFit(j))
}

/// 𝓜ₙ,ₙ: the average over observed levels t = yⱼ of the two-slice SIR
/// matrix for the dichotomized response I(y ≤ t), mapped back to the
/// original covariate scale.
pub fn dee_sir_matrix(d: &Dataset) -> Result<DMatrix<f64>> {
    let n = d.n();
    let p = d.p();
    let info = standardization_of(d.x())?;
    let z = info.apply(d.x());
    let y = d.y();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

    // prefix[k] = sum of the first k standardized rows in y-order
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = DVector::<f64>::zeros(p);
    prefix.push(acc.clone());
    for &i in &order {
        acc += z.row(i).transpose();
        prefix.push(acc.clone());
    }
    let total = prefix[n].clone();

    let nf = n as f64;
    let mut m = DMatrix::<f64>::zeros(p, p);
    let mut k = 0;
    while k < n {
        let mut end = k + 1;
        while end < n && y[order[end]] == y[order[k]] {
            end += 1;
        }
        // levels in this tie block share the lower slice of size `end`
        let lower = &prefix[end];
        let mut level = DMatrix::<f64>::zeros(p, p);
        let n0 = end as f64;
        let mean0 = lower / n0;
        level += (n0 / nf) * &mean0 * mean0.transpose();
        if end < n {
            let n1 = nf - n0;
            let mean1 = (&total - lower) / n1;
            level += (n1 / nf) * &mean1 * mean1.transpose();
        }
        m += level * ((end - k) as f64);
        k = end;
    }
    m /= nf;
    let a = &info.cov_inv_sqrt;
    Ok(linalg::symmetrize(&(a * m * a.transpose())))
}

/// Ridge constant c = 1/√(n·h_ref).
pub fn rre_ridge(n: usize, h_ref: f64) -> f64 {
    1.0 / (n as f64 * h_ref).sqrt()
}

/// Default reference bandwidth n^(−1/5) for the ridge.
pub fn default_h_ref(n: usize) -> f64 {
    (n as f64).powf(-0.2)
}

/// argmin over k = 1..p−1 of (λ_{k+1} + c)/(λ_k + c); ties go to the smallest k.
pub fn rre_select_q(eigenvalues: &[f64], n: usize, h_ref: f64) -> usize {
    let p = eigenvalues.len();
    if p < 2 {
        return 1;
    }
    let c = rre_ridge(n, h_ref);
    let mut best_k = 1;
    let mut best = f64::INFINITY;
    for k in 1..p {
        let ratio = (eigenvalues[k] + c) / (eigenvalues[k - 1] + c);
        if ratio < best {
            best = ratio;
            best_k = k;
        }
    }
    best_k
}

/// Unit eigenvectors of the `q_hat` largest eigenvalues, each with its
/// largest-magnitude entry positive.
pub fn estimate_b(candidate: &DMatrix<f64>, q_hat: usize) -> Result<DMatrix<f64>> {
    let p = candidate.nrows();
    if q_hat == 0 || q_hat > p {
        return Err(RdreamError::InvalidConfig(format!(
            "q_hat = {q_hat} outside 1..={p}"
        )));
    }
    let (_, vecs) = linalg::sym_eigen_desc(candidate)?;
    let mut b = vecs.columns(0, q_hat).into_owned();
    for mut col in b.column_iter_mut() {
        let (idx, _) = col.iter().enumerate().fold((0, -1.0), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        if col[idx] < 0.0 {
            col.neg_mut();
        }
        let norm = col.norm();
        col /= norm;
    }
    Ok(b)
}

fn projector(b: &DMatrix<f64>) -> DMatrix<f64> {
    b * b.transpose()
}

/// ‖P₁ − P₂‖_F / √(2·max(q₁, q₂)), in [0, 1].
pub fn subspace_distance(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> f64 {
    assert_eq!(
        b1.nrows(),
        b2.nrows(),
        "subspace bases must share a row dimension"
    );
    let q = b1.ncols().max(b2.ncols()) as f64;
    let d = (projector(b1) - projector(b2)).norm() / (2.0 * q).sqrt();
    d.min(1.0)
}

/// Candidate matrix → clipped spectrum → q̂ → B̂.
pub fn run_sdr(d: &Dataset, method: SdrMethod, h_ref: Option<f64>) -> Result<SdrResult> {
    let h_ref = h_ref.unwrap_or_else(|| default_h_ref(d.n()));
    let (candidate, prefit) = match method {
        SdrMethod::Opg => {
            let h0 = opg_prefit_bandwidth(d.n(), d.p());
            (opg_matrix_with_bandwidth(d, h0)?, Some(h0))
        }
        SdrMethod::Dee => (dee_sir_matrix(d)?, None),
    };
    let (vals, _) = linalg::sym_eigen_desc(&candidate)?;
    let eigenvalues = vals.map(|v| v.max(0.0));
    let q_hat = rre_select_q(eigenvalues.as_slice(), d.n(), h_ref);
    let b_hat = estimate_b(&candidate, q_hat)?;
    Ok(SdrResult {
        method,
        candidate,
        eigenvalues,
        q_hat,
        b_hat,
        h_ref,
        ridge_c: rre_ridge(d.n(), h_ref),
        prefit_bandwidth: prefit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    fn unit(v: &[f64]) -> DVector<f64> {
        let d = DVector::from_column_slice(v);
        let n = d.norm();
        d / n
    }

    #[test]
    fn rre_examples() {
        let h = default_h_ref(100);
        assert_eq!(rre_select_q(&[1.0, 0.0, 0.0, 0.0], 100, h), 1);
        // c = 1/sqrt(100 * 100^(-1/5)) ≈ 0.15849
        let c = rre_ridge(100, h);
        assert!((c - 0.158_489_3).abs() < 1e-6);
        let r1 = (0.8 + c) / (1.0 + c);
        let r2 = c / (0.8 + c);
        assert!(r2 < r1 && r2 < 1.0);
        assert_eq!(rre_select_q(&[1.0, 0.8, 0.0, 0.0], 100, h), 2);
        assert_eq!(rre_select_q(&[1.0, 1.0, 1.0, 1.0], 100, h), 1);
    }

    #[test]
    fn rre_ignores_trailing_zeros() {
        let h = default_h_ref(200);
        let base = [2.0, 0.05, 0.0];
        let q = rre_select_q(&base, 200, h);
        let mut longer = base.to_vec();
        longer.extend([0.0; 5]);
        assert_eq!(rre_select_q(&longer, 200, h), q);
    }

    #[test]
    fn estimate_b_rank_one() {
        let beta = unit(&[1.0, 1.0]);
        let m = &beta * beta.transpose();
        let b = estimate_b(&m, 1).unwrap();
        assert!((b.column(0) - &beta).amax() < 1e-12);
    }

    #[test]
    fn estimate_b_diagonal_and_identity() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let b = estimate_b(&m, 2).unwrap();
        assert!((b - DMatrix::identity(3, 2)).amax() < 1e-12);

        let id = DMatrix::<f64>::identity(3, 3);
        let b = estimate_b(&id, 2).unwrap();
        assert!((b.transpose() * &b - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert!((&id * &b - &b).amax() < 1e-10);
    }

    #[test]
    fn subspace_distance_examples() {
        let b = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(subspace_distance(&b, &b) < 1e-15);
        let t = 0.7f64;
        let rot = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert!(subspace_distance(&b, &(&b * rot)) < 1e-12);
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!((subspace_distance(&e1, &e2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opg_noiseless_linear_is_rank_one() {
        let x = gaussian(200, 4, 1);
        let beta = unit(&[1.0, -2.0, 0.5, 1.0]);
        let y = &x * &beta;
        let d = validate_dataset(y, x).unwrap();
        let m = opg_matrix(&d).unwrap();
        let (vals, _) = linalg::sym_eigen_desc(&m).unwrap();
        assert!(vals[1] < 1e-6 * vals[0], "{vals}");
        let b = estimate_b(&m, 1).unwrap();
        let target = DMatrix::from_column_slice(4, 1, beta.as_slice());
        assert!(subspace_distance(&b, &target) < 1e-6);
    }

    #[test]
    fn opg_huge_bandwidth_gives_ols_slope() {
        let x = gaussian(60, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = DVector::from_fn(60, |i, _| {
            x[(i, 0)] - 0.5 * x[(i, 2)]
                + 0.3 * x[(i, 1)].powi(2)
                + 0.2 * {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e
                }
        });
        let d = validate_dataset(y.clone(), x.clone()).unwrap();
        let m = opg_matrix_with_bandwidth(&d, 1e8).unwrap();
        let ols = crate::robust::fit_ols_linear(&d).unwrap();
        let expected = &ols.beta * ols.beta.transpose();
        assert!((m - expected).amax() < 1e-6);
    }

    #[test]
    fn opg_pure_noise_has_no_dominant_direction() {
        let x = gaussian(400, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = DVector::from_fn(400, |_, _| StandardNormal.sample(&mut rng));
        let d = validate_dataset(y, x).unwrap();
        let (vals, _) = linalg::sym_eigen_desc(&opg_matrix(&d).unwrap()).unwrap();
        let median = 0.5 * (vals[1] + vals[2]);
        assert!(vals[0] < 10.0 * median, "{vals}");
    }

    #[test]
    fn dee_pure_noise_is_small() {
        let x = gaussian(400, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = DVector::from_fn(400, |_, _| StandardNormal.sample(&mut rng));
        let d = validate_dataset(y, x).unwrap();
        let (vals, _) = linalg::sym_eigen_desc(&dee_sir_matrix(&d).unwrap()).unwrap();
        assert!(vals[0] < 0.05, "{vals}");
        assert!(vals[3] > -1e-10);
    }

    #[test]
    fn dee_recovers_monotone_index() {
        let x = gaussian(400, 4, 7);
        let beta = unit(&[1.0, 1.0, -1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = DVector::from_fn(400, |i, _| {
            (x.row(i) * &beta)[0]
                + 0.1 * {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e
                }
        });
        let d = validate_dataset(y, x).unwrap();
        let b = estimate_b(&dee_sir_matrix(&d).unwrap(), 1).unwrap();
        let cos = (b.column(0).dot(&beta)).abs();
        assert!(cos > 10f64.to_radians().cos(), "cos = {cos}");
    }

    #[test]
    fn dee_top_level_contributes_nothing() {
        // with every y equal there is a single level t = max(y) and an empty
        // upper slice; the lower slice mean is exactly the centered mean 0
        let x = gaussian(30, 3, 10);
        let d = validate_dataset(DVector::from_element(30, 1.0), x).unwrap();
        assert!(dee_sir_matrix(&d).unwrap().amax() < 1e-12);
    }

    #[test]
    fn run_sdr_noiseless_linear() {
        let x = gaussian(300, 5, 12);
        let beta = unit(&[1.0, 0.0, 2.0, -1.0, 0.0]);
        let y = &x * &beta;
        let d = validate_dataset(y, x).unwrap();
        let target = DMatrix::from_column_slice(5, 1, beta.as_slice());
        for method in [SdrMethod::Opg, SdrMethod::Dee] {
            let r = run_sdr(&d, method, None).unwrap();
            assert_eq!(r.q_hat, 1, "{method:?}");
            assert!(subspace_distance(&r.b_hat, &target) < 0.1, "{method:?}");
            assert!((r.b_hat.transpose() * &r.b_hat)[(0, 0)] - 1.0 < 1e-10);
            assert!((&r.candidate - r.candidate.transpose()).amax() < 1e-10);
        }
    }
}
