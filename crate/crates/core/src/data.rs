//! Observation containers, link functions, fitted models, and covariate
//! standardization.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{RdreamError, Result};
use crate::linalg;

/// Validated response vector and covariate matrix.
///
/// Rows of `x` are observations. Construct through [`validate_dataset`] so the
/// invariants (n >= 3, p >= 1, all entries finite) hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Copy of this dataset with a different response vector (same length).
    pub fn with_response(&self, y: DVector<f64>) -> Result<Dataset> {
        validate_dataset(y, self.x.clone())
    }

    /// Copy of this dataset with the response centered at its sample mean.
    pub fn centered_response(&self) -> Dataset {
        let mean = self.y.mean();
        Dataset {
            y: self.y.map(|v| v - mean),
            x: self.x.clone(),
        }
    }

    /// Reorders observations: row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        let y = DVector::from_iterator(perm.len(), perm.iter().map(|&i| self.y[i]));
        let x = DMatrix::from_fn(perm.len(), self.p(), |r, c| self.x[(perm[r], c)]);
        Dataset { y, x }
    }
}

/// Checks shapes and finiteness and wraps the inputs in a [`Dataset`].
pub fn validate_dataset(y: DVector<f64>, x: DMatrix<f64>) -> Result<Dataset> {
    if y.len() != x.nrows() {
        return Err(RdreamError::ShapeMismatch(format!(
            "response has length {} but covariate matrix has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if x.ncols() == 0 {
        return Err(RdreamError::EmptyCovariates);
    }
    if let Some(index) = y.iter().position(|v| !v.is_finite()) {
        return Err(RdreamError::NonFinite { what: "y", index });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        // column-major storage; report the row
        return Err(RdreamError::NonFinite {
            what: "x",
            index: index % x.nrows(),
        });
    }
    if y.len() < 3 {
        return Err(RdreamError::TooFewObservations(y.len()));
    }
    Ok(Dataset { y, x })
}

pub type LinkFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Returns `(dg/du, dg/dθ)`.
pub type LinkGradFn = Arc<dyn Fn(f64, &[f64]) -> (f64, Vec<f64>) + Send + Sync>;
/// Maps θ to θ' such that g(s·u, θ) = g(u, θ') for a scale factor s.
pub type ScaleAbsorbFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Linear,
    UserSingleIndex,
}

#[derive(Clone)]
pub enum LinkGradient {
    Analytic(LinkGradFn),
    /// Central finite differences on `g`.
    Numeric,
    Unavailable,
}

/// The known link g(u, θ) of the null model Y = β₀ + g(βᵀX, θ) + e.
#[derive(Clone)]
pub struct LinkSpec {
    kind: LinkKind,
    name: String,
    theta_dim: usize,
    value: LinkFn,
    gradient: LinkGradient,
    /// Starting points tried when initializing θ.
    theta_grid: Vec<Vec<f64>>,
    absorb_scale: Option<ScaleAbsorbFn>,
}

impl fmt::Debug for LinkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkSpec")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("theta_dim", &self.theta_dim)
            .finish()
    }
}

/// Links compare by identity (kind, name, θ dimension), not by closure.
impl PartialEq for LinkSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.name == other.name && self.theta_dim == other.theta_dim
    }
}

impl LinkSpec {
    /// g(u) = u, no nuisance parameter.
    pub fn linear() -> LinkSpec {
        LinkSpec {
            kind: LinkKind::Linear,
            name: "linear".into(),
            theta_dim: 0,
            value: Arc::new(|u, _| u),
            gradient: LinkGradient::Analytic(Arc::new(|_, _| (1.0, Vec::new()))),
            theta_grid: vec![Vec::new()],
            absorb_scale: None,
        }
    }

    /// g(u, θ) = θ₀·exp(θ₁·u).
    pub fn exponential() -> LinkSpec {
        let mut grid = Vec::new();
        for &c in &[-2.0, -0.5, 0.5, 2.0] {
            for &r in &[-1.0, -0.3, 0.3, 1.0] {
                grid.push(vec![c, r]);
            }
        }
        LinkSpec {
            kind: LinkKind::UserSingleIndex,
            name: "exponential".into(),
            theta_dim: 2,
            value: Arc::new(|u, t| t[0] * (t[1] * u).exp()),
            gradient: LinkGradient::Analytic(Arc::new(|u, t| {
                let e = (t[1] * u).exp();
                (t[0] * t[1] * e, vec![e, t[0] * u * e])
            })),
            theta_grid: grid,
            absorb_scale: Some(Arc::new(|t, s| vec![t[0], t[1] * s])),
        }
    }

    /// A user-supplied link. `theta_grid` must contain at least one
    /// starting point of length `theta_dim`.
    pub fn user(
        name: impl Into<String>,
        theta_dim: usize,
        value: LinkFn,
        gradient: LinkGradient,
        theta_grid: Vec<Vec<f64>>,
        absorb_scale: Option<ScaleAbsorbFn>,
    ) -> Result<LinkSpec> {
        if theta_grid.is_empty() || theta_grid.iter().any(|t| t.len() != theta_dim) {
            return Err(RdreamError::InvalidConfig(
                "theta grid must be non-empty with entries of length theta_dim".into(),
            ));
        }
        Ok(LinkSpec {
            kind: LinkKind::UserSingleIndex,
            name: name.into(),
            theta_dim,
            value,
            gradient,
            theta_grid,
            absorb_scale,
        })
    }

    /// Built-in link by name: `linear` or `exponential`.
    pub fn by_name(name: &str) -> Result<LinkSpec> {
        match name.to_ascii_lowercase().as_str() {
            "linear" => Ok(LinkSpec::linear()),
            "exponential" | "exp" => Ok(LinkSpec::exponential()),
            other => Err(RdreamError::InvalidConfig(format!(
                "unknown link family '{other}'"
            ))),
        }
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn theta_grid(&self) -> &[Vec<f64>] {
        &self.theta_grid
    }

    pub fn absorbs_scale(&self) -> bool {
        self.absorb_scale.is_some()
    }

    pub fn eval(&self, u: f64, theta: &[f64]) -> f64 {
        (self.value)(u, theta)
    }

    /// θ' with g(s·u, θ) = g(u, θ'), if the link supports it.
    pub fn absorb_scale(&self, theta: &[f64], s: f64) -> Option<Vec<f64>> {
        self.absorb_scale.as_ref().map(|f| f(theta, s))
    }

    /// Gradient `(dg/du, dg/dθ)` at `(u, θ)`.
    pub fn gradient(&self, u: f64, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        match &self.gradient {
            LinkGradient::Analytic(f) => Ok(f(u, theta)),
            LinkGradient::Numeric => Ok(self.numeric_gradient(u, theta)),
            LinkGradient::Unavailable => Err(RdreamError::GradientUnavailable),
        }
    }

    fn numeric_gradient(&self, u: f64, theta: &[f64]) -> (f64, Vec<f64>) {
        let step = |v: f64| 1e-6 * (1.0 + v.abs());
        let hu = step(u);
        let du = (self.eval(u + hu, theta) - self.eval(u - hu, theta)) / (2.0 * hu);
        let mut t = theta.to_vec();
        let dtheta = (0..theta.len())
            .map(|k| {
                let h = step(theta[k]);
                t[k] = theta[k] + h;
                let up = self.eval(u, &t);
                t[k] = theta[k] - h;
                let down = self.eval(u, &t);
                t[k] = theta[k];
                (up - down) / (2.0 * h)
            })
            .collect();
        (du, dtheta)
    }
}

/// Robust fit of the null model Y = β₀ + g(βᵀX, θ) + e.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub beta: DVector<f64>,
    pub intercept: f64,
    pub theta: Vec<f64>,
    pub link: LinkSpec,
    pub residuals: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FittedModel {
    /// Fitted value β₀ + g(βᵀx, θ) for one covariate row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let u: f64 = row.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        self.intercept + self.link.eval(u, &self.theta)
    }

    pub fn residuals_for(&self, d: &Dataset) -> DVector<f64> {
        let index = d.x() * &self.beta;
        DVector::from_iterator(
            d.n(),
            (0..d.n()).map(|i| d.y()[i] - self.intercept - self.link.eval(index[i], &self.theta)),
        )
    }
}

/// Affine map z = A·(x − mean) with A = Σ^{-1/2} symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationInfo {
    pub mean: DVector<f64>,
    pub cov_inv_sqrt: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
}

impl StandardizationInfo {
    /// Standardizes the rows of `x`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centered * &self.cov_inv_sqrt
    }

    /// Inverse of [`apply`](Self::apply).
    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * &self.cov_sqrt;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

/// Eigenvalues below this fraction of the largest are treated as singular.
const COV_EIGEN_FLOOR: f64 = 1e-10;

pub fn standardization_of(x: &DMatrix<f64>) -> Result<StandardizationInfo> {
    let cov = linalg::sample_covariance(x);
    let (vals, vecs) = linalg::sym_eigen_desc(&cov)?;
    let largest = vals[0];
    let smallest = vals[vals.len() - 1];
    let floor = COV_EIGEN_FLOOR * largest.max(0.0);
    if !(largest > 0.0) || smallest <= floor {
        return Err(RdreamError::SingularCovariance {
            eigenvalue: smallest,
            floor,
        });
    }
    let inv_sqrt = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    let sqrt = DMatrix::from_diagonal(&vals.map(f64::sqrt));
    Ok(StandardizationInfo {
        mean: linalg::column_means(x),
        cov_inv_sqrt: linalg::symmetrize(&(&vecs * inv_sqrt * vecs.transpose())),
        cov_sqrt: linalg::symmetrize(&(&vecs * sqrt * vecs.transpose())),
    })
}

/// Centers the covariates and whitens them to identity sample covariance.
pub fn standardize_covariates(d: &Dataset) -> Result<(Dataset, StandardizationInfo)> {
    let info = standardization_of(d.x())?;
    let z = info.apply(d.x());
    Ok((
        Dataset {
            y: d.y.clone(),
            x: z,
        },
        info,
    ))
}

/// Standardizes each column separately to mean 0 and unit variance.
pub fn scale_columns(d: &Dataset) -> Result<Dataset> {
    let n = d.n() as f64;
    let mut x = d.x().clone();
    for (c, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if !(var > 0.0) {
            return Err(RdreamError::InvalidConfig(format!(
                "covariate column {c} is constant"
            )));
        }
        let sd = var.sqrt();
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(Dataset { y: d.y.clone(), x })
}
