//! Quartic kernels, bandwidth rules, and the pairwise kernel-weight matrix
//! shared by all kernel statistics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RdreamError, Result};

/// Above this size the weight matrix is filled by a sorted window search
/// along the first projected coordinate.
pub const WINDOWED_THRESHOLD: usize = 2000;

/// ∫ K(u)² du for the quartic kernel.
pub const QUARTIC_ROUGHNESS: f64 = 5.0 / 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Quartic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub dim: usize,
}

impl KernelSpec {
    pub fn quartic(dim: usize) -> KernelSpec {
        KernelSpec {
            kind: KernelKind::Quartic,
            dim,
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.dim);
        product_kernel(u)
    }
}

/// K(u) = 15/16 (1 − u²)² on |u| ≤ 1.
#[inline]
pub fn quartic_kernel(u: f64) -> f64 {
    let u2 = u * u;
    if u2 <= 1.0 {
        let t = 1.0 - u2;
        0.9375 * t * t
    } else {
        0.0
    }
}

/// Product of univariate quartic kernels.
pub fn product_kernel(u: &[f64]) -> f64 {
    let mut acc = 1.0;
    for &c in u {
        acc *= quartic_kernel(c);
        if acc == 0.0 {
            return 0.0;
        }
    }
    acc
}

/// Bandwidth rules of the form h = c·n^(−1/(q+4)), or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    /// c = 1.8
    OpgTest,
    /// c = 0.5
    DeeTest,
    Rate {
        constant: f64,
    },
    Fixed(f64),
}

impl BandwidthRule {
    pub fn constant(&self) -> f64 {
        match *self {
            BandwidthRule::OpgTest => 1.8,
            BandwidthRule::DeeTest => 0.5,
            BandwidthRule::Rate { constant } => constant,
            BandwidthRule::Fixed(h) => h,
        }
    }
}

pub fn bandwidth(rule: BandwidthRule, n: usize, q_hat: usize) -> f64 {
    match rule {
        BandwidthRule::Fixed(h) => h,
        _ => rule.constant() * (n as f64).powf(-1.0 / (q_hat as f64 + 4.0)),
    }
}

/// Symmetric n × n matrix W[i][j] = h^(−q)·K((z_i − z_j)/h), zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseWeights {
    n: usize,
    h: f64,
    q: usize,
    data: Vec<f64>,
}

impl PairwiseWeights {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Σ_i Σ_{j≠i} W[i][j]·a_i·a_j, summed in index order.
    pub fn quadratic_form(&self, a: &[f64]) -> f64 {
        assert_eq!(a.len(), self.n);
        let mut total = 0.0;
        for i in 0..self.n {
            let row = self.row(i);
            let mut s = 0.0;
            for j in 0..self.n {
                s += row[j] * a[j];
            }
            total += a[i] * s;
        }
        total
    }

    /// Σ_i Σ_{j≠i} W[i][j]²·c_i·c_j.
    pub fn squared_quadratic_form(&self, c: &[f64]) -> f64 {
        assert_eq!(c.len(), self.n);
        let mut total = 0.0;
        for i in 0..self.n {
            let row = self.row(i);
            let mut s = 0.0;
            for j in 0..self.n {
                s += row[j] * row[j] * c[j];
            }
            total += c[i] * s;
        }
        total
    }

    /// Σ_i Σ_{j≠i} W[i][j]².
    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|w| w * w).sum()
    }
}

#[inline]
fn pair_weight(z: &DMatrix<f64>, i: usize, j: usize, h: f64, scale: f64) -> f64 {
    let mut acc = scale;
    for c in 0..z.ncols() {
        acc *= quartic_kernel((z[(i, c)] - z[(j, c)]) / h);
        if acc == 0.0 {
            return 0.0;
        }
    }
    acc
}

/// Dense double loop; also the reference for the windowed path.
pub fn pairwise_weights_dense(z: &DMatrix<f64>, h: f64) -> Result<PairwiseWeights> {
    if !(h > 0.0) {
        return Err(RdreamError::DegenerateBandwidth(h));
    }
    let n = z.nrows();
    let q = z.ncols();
    let scale = h.powi(-(q as i32));
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = pair_weight(z, i, j, h, scale);
            data[i * n + j] = w;
            data[j * n + i] = w;
        }
    }
    Ok(PairwiseWeights { n, h, q, data })
}

fn pairwise_weights_windowed(z: &DMatrix<f64>, h: f64) -> PairwiseWeights {
    let n = z.nrows();
    let q = z.ncols();
    let scale = h.powi(-(q as i32));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[(a, 0)].total_cmp(&z[(b, 0)]));
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let zi = z[(i, 0)];
        let pos = order.partition_point(|&k| z[(k, 0)] < zi - h);
        for &j in &order[pos..] {
            if z[(j, 0)] > zi + h {
                break;
            }
            if j != i {
                row[j] = pair_weight(z, i, j, h, scale);
            }
        }
    });
    PairwiseWeights { n, h, q, data }
}

/// Pairwise weights for projected covariates `z` (n × q) at bandwidth `h`.
pub fn pairwise_weights(z: &DMatrix<f64>, h: f64) -> Result<PairwiseWeights> {
    if !(h > 0.0) {
        return Err(RdreamError::DegenerateBandwidth(h));
    }
    if z.nrows() > WINDOWED_THRESHOLD && z.ncols() > 0 {
        Ok(pairwise_weights_windowed(z, h))
    } else {
        pairwise_weights_dense(z, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson quadrature, test-only.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn quartic_values() {
        assert_eq!(quartic_kernel(0.0), 0.9375);
        assert_eq!(quartic_kernel(1.0), 0.0);
        assert_eq!(quartic_kernel(-1.0), 0.0);
        assert_eq!(quartic_kernel(0.5), 0.52734375);
        assert_eq!(quartic_kernel(1.5), 0.0);
    }

    #[test]
    fn product_values() {
        assert_eq!(product_kernel(&[0.3]), quartic_kernel(0.3));
        assert_eq!(product_kernel(&[0.0, 0.0]), 0.87890625);
        assert_eq!(product_kernel(&[0.1, 1.0]), 0.0);
        assert_eq!(KernelSpec::quartic(2).eval(&[0.0, 0.0]), 0.87890625);
    }

    #[test]
    fn kernel_integrals() {
        let one = simpson(&quartic_kernel, -1.0, 1.0, 1e-13);
        let rough = simpson(&|u| quartic_kernel(u).powi(2), -1.0, 1.0, 1e-13);
        assert!((one - 1.0).abs() < 1e-10);
        assert!((rough - QUARTIC_ROUGHNESS).abs() < 1e-10);
    }

    #[test]
    fn bandwidth_rules() {
        assert!((bandwidth(BandwidthRule::OpgTest, 100, 1) - 0.716_593).abs() < 1e-6);
        assert!((bandwidth(BandwidthRule::DeeTest, 100, 1) - 0.199_054).abs() < 1e-6);
        assert!((bandwidth(BandwidthRule::OpgTest, 100, 2) - 0.835_486).abs() < 1e-6);
        assert_eq!(bandwidth(BandwidthRule::Fixed(0.3), 100, 2), 0.3);
    }

    #[test]
    fn identical_rows_weight() {
        let z = DMatrix::from_column_slice(2, 1, &[0.4, 0.4]);
        let w = pairwise_weights(&z, 1.0).unwrap();
        assert_eq!(w.get(0, 1), 0.9375);
        assert_eq!(w.get(1, 0), 0.9375);
        assert_eq!(w.get(0, 0), 0.0);
    }

    #[test]
    fn far_rows_zero_and_bad_bandwidth() {
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.1, 3.0]);
        assert_eq!(pairwise_weights(&z, 1.0).unwrap().get(0, 1), 0.0);
        assert_eq!(
            pairwise_weights(&z, 0.0).unwrap_err(),
            RdreamError::DegenerateBandwidth(0.0)
        );
    }

    fn pseudo_random(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(n, q, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
    }

    #[test]
    fn symmetric_and_scale_covariant() {
        let z = pseudo_random(20, 2, 3);
        let w = pairwise_weights(&z, 0.9).unwrap();
        let w2 = pairwise_weights(&(&z * 2.0), 1.8).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(w.get(i, j), w.get(j, i));
                assert!((w.get(i, j) - 4.0 * w2.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn windowed_matches_dense() {
        let z = pseudo_random(2100, 2, 11);
        let dense = pairwise_weights_dense(&z, 0.3).unwrap();
        let fast = pairwise_weights(&z, 0.3).unwrap();
        assert_eq!(dense, fast);
    }

    #[test]
    fn kernel_is_even() {
        let z = pseudo_random(10_000, 1, 5);
        for u in z.iter() {
            assert_eq!(quartic_kernel(*u), quartic_kernel(-*u));
        }
    }
}
