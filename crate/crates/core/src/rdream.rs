//! The RDREAM statistic chain Vₙ → V̂ar → Sₙ → S̃ₙ → p-value and the
//! end-to-end test pipeline, plus the sensitivity-curve probe.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::chisq::{chi2_1_critical, chi2_1_sf};
use crate::data::{Dataset, FittedModel, LinkSpec};
use crate::error::{RdreamError, Result};
use crate::kernel::{bandwidth, pairwise_weights, BandwidthRule, PairwiseWeights};
use crate::rank::{centered_rank_transform, RankScores};
use crate::robust::{fit_robust, HuberConfig};
use crate::sdr::{estimate_b, run_sdr, SdrMethod, SdrResult};

/// Which test a report belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    Opg,
    Dee,
    Wq,
    Gwz,
}

impl TestMethod {
    pub const ALL: [TestMethod; 4] = [
        TestMethod::Opg,
        TestMethod::Dee,
        TestMethod::Wq,
        TestMethod::Gwz,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestMethod::Opg => "opg",
            TestMethod::Dee => "dee",
            TestMethod::Wq => "wq",
            TestMethod::Gwz => "gwz",
        }
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestMethod {
    type Err = RdreamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "opg" => Ok(TestMethod::Opg),
            "dee" => Ok(TestMethod::Dee),
            "wq" => Ok(TestMethod::Wq),
            "gwz" => Ok(TestMethod::Gwz),
            other => Err(RdreamError::InvalidConfig(format!(
                "unknown method '{other}'"
            ))),
        }
    }
}

/// User overrides of the data-driven tuning choices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TestOverrides {
    pub h: Option<f64>,
    pub q_hat: Option<usize>,
    /// Fixes the projection; its column count becomes q̂.
    pub b_hat: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOptions {
    pub huber: HuberConfig,
    /// Levels at which a decision is recorded.
    pub alphas: Vec<f64>,
    pub overrides: TestOverrides,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            huber: HuberConfig::default(),
            alphas: vec![0.01, 0.05, 0.10],
            overrides: TestOverrides::default(),
        }
    }
}

/// Summary of the null-model fit carried in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub link: String,
    pub robust: bool,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitSummary {
    pub fn of(fit: &FittedModel, robust: bool) -> FitSummary {
        FitSummary {
            link: fit.link.name().to_string(),
            robust,
            intercept: fit.intercept,
            beta: fit.beta.iter().copied().collect(),
            theta: fit.theta.clone(),
            converged: fit.converged,
            iterations: fit.iterations,
        }
    }
}

/// Full record of one test: the statistic chain, every tuning value, and the
/// decisions. `var_hat`, `s_n`, `s_n_adj` and `p_value` are absent when the
/// variance estimate is degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: TestMethod,
    pub n: usize,
    pub p: usize,
    /// Vₙ, Ṽₙ or Tₙᴳᵂᶻ depending on the method.
    pub v_n: f64,
    pub var_hat: Option<f64>,
    pub s_n: Option<f64>,
    pub s_n_adj: Option<f64>,
    pub p_value: Option<f64>,
    /// Kernel dimension: q̂ for the projected tests, p for WQ.
    pub q_hat: usize,
    /// Projection used by the kernel, row-major p × q̂; empty for WQ.
    pub b_hat: Vec<Vec<f64>>,
    pub h: f64,
    pub bandwidth_rule: String,
    pub sdr_method: Option<SdrMethod>,
    pub sdr_eigenvalues: Vec<f64>,
    pub ridge_c: Option<f64>,
    pub h_ref: Option<f64>,
    pub prefit_bandwidth: Option<f64>,
    pub size_adjustment: f64,
    pub reject_at: BTreeMap<String, bool>,
    pub fit: FitSummary,
    pub diagnostics: Vec<String>,
}

impl TestReport {
    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.s_n_adj.map(|s| s * s >= chi2_1_critical(alpha))
    }

    /// Flat `(key, value)` records, one per scalar.
    pub fn to_records(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = vec![
            ("method".to_string(), self.method.to_string()),
            ("n".into(), self.n.to_string()),
            ("p".into(), self.p.to_string()),
            ("v_n".into(), self.v_n.to_string()),
            ("var_hat".into(), opt(self.var_hat)),
            ("s_n".into(), opt(self.s_n)),
            ("s_n_adj".into(), opt(self.s_n_adj)),
            ("p_value".into(), opt(self.p_value)),
            ("q_hat".into(), self.q_hat.to_string()),
            ("h".into(), self.h.to_string()),
            ("bandwidth_rule".into(), self.bandwidth_rule.clone()),
            (
                "sdr_method".into(),
                self.sdr_method
                    .map(|m| m.as_str().to_string())
                    .unwrap_or_default(),
            ),
            ("ridge_c".into(), opt(self.ridge_c)),
            ("h_ref".into(), opt(self.h_ref)),
            ("prefit_bandwidth".into(), opt(self.prefit_bandwidth)),
            ("size_adjustment".into(), self.size_adjustment.to_string()),
        ];
        for (i, row) in self.b_hat.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push((format!("b_hat[{i}][{j}]"), v.to_string()));
            }
        }
        for (i, v) in self.sdr_eigenvalues.iter().enumerate() {
            out.push((format!("eigenvalue[{i}]"), v.to_string()));
        }
        for (alpha, decision) in &self.reject_at {
            out.push((format!("reject_at[{alpha}]"), decision.to_string()));
        }
        out.push(("fit.link".into(), self.fit.link.clone()));
        out.push(("fit.robust".into(), self.fit.robust.to_string()));
        out.push(("fit.intercept".into(), self.fit.intercept.to_string()));
        for (i, v) in self.fit.beta.iter().enumerate() {
            out.push((format!("fit.beta[{i}]"), v.to_string()));
        }
        for (i, v) in self.fit.theta.iter().enumerate() {
            out.push((format!("fit.theta[{i}]"), v.to_string()));
        }
        out.push(("fit.converged".into(), self.fit.converged.to_string()));
        out.push(("fit.iterations".into(), self.fit.iterations.to_string()));
        for (i, d) in self.diagnostics.iter().enumerate() {
            out.push((format!("diagnostic[{i}]"), d.clone()));
        }
        out
    }
}

/// Vₙ = (1/(n(n−1))) Σᵢ Σ_{j≠i} W[i][j]·ê*ᵢ·ê*ⱼ.
pub fn vn_statistic(scores: &RankScores, weights: &PairwiseWeights) -> f64 {
    u_statistic(&scores.scores, weights)
}

pub(crate) fn u_statistic(values: &[f64], weights: &PairwiseWeights) -> f64 {
    let n = values.len() as f64;
    weights.quadratic_form(values) / (n * (n - 1.0))
}

/// V̂ar = (1/(72n(n−1))) Σᵢ Σ_{j≠i} h^(−q) K²(·) from an existing weight matrix.
pub fn var_from_weights(weights: &PairwiseWeights) -> Result<f64> {
    let n = weights.n() as f64;
    let hq = weights.bandwidth().powi(weights.dim() as i32);
    // h^(-q) K² = h^q W²
    let var = hq * weights.sum_of_squares() / (72.0 * n * (n - 1.0));
    if var > 0.0 {
        Ok(var)
    } else {
        Err(RdreamError::DegenerateVariance)
    }
}

/// V̂ar for projections `z` (n × q̂) at bandwidth `h`.
pub fn var_estimate(z: &DMatrix<f64>, h: f64) -> Result<f64> {
    var_from_weights(&pairwise_weights(z, h)?)
}

/// Sₙ = ((n−1)/n)·n·h^(1/2)·Vₙ/√V̂ar.
pub fn sn_statistic(v_n: f64, var_hat: f64, n: usize, h: f64) -> f64 {
    let nf = n as f64;
    (nf - 1.0) / nf * nf * h.sqrt() * v_n / var_hat.sqrt()
}

/// Finite-sample factor 1 + 4n^(−4/5).
pub fn size_adjustment_factor(n: usize) -> f64 {
    1.0 + 4.0 * (n as f64).powf(-0.8)
}

/// S̃ₙ = (1 + 4n^(−4/5))·Sₙ.
pub fn size_adjusted(s_n: f64, n: usize) -> f64 {
    size_adjustment_factor(n) * s_n
}

pub(crate) fn decisions(s_adj: Option<f64>, alphas: &[f64]) -> BTreeMap<String, bool> {
    let mut map = BTreeMap::new();
    if let Some(s) = s_adj {
        for &a in alphas {
            map.insert(a.to_string(), s * s >= chi2_1_critical(a));
        }
    }
    map
}

/// Standardized pieces shared by every kernel test once V and the variance
/// estimate are known.
pub(crate) struct Chain {
    pub var_hat: Option<f64>,
    pub s_n: Option<f64>,
    pub s_n_adj: Option<f64>,
    pub p_value: Option<f64>,
}

pub(crate) fn finish_chain(
    var: Result<f64>,
    standardize: impl FnOnce(f64) -> f64,
    n: usize,
) -> Result<Chain> {
    match var {
        Ok(v) => {
            let s = standardize(v);
            let adj = size_adjusted(s, n);
            Ok(Chain {
                var_hat: Some(v),
                s_n: Some(s),
                s_n_adj: Some(adj),
                p_value: Some(chi2_1_sf(adj * adj)),
            })
        }
        Err(RdreamError::DegenerateVariance) => Ok(Chain {
            var_hat: None,
            s_n: None,
            s_n_adj: None,
            p_value: None,
        }),
        Err(e) => Err(e),
    }
}

pub(crate) fn matrix_rows(b: &DMatrix<f64>) -> Vec<Vec<f64>> {
    b.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Projection B̂, q̂ and the SDR record after applying overrides.
pub(crate) fn resolve_projection(
    d: &Dataset,
    method: SdrMethod,
    overrides: &TestOverrides,
) -> Result<(DMatrix<f64>, Option<SdrResult>)> {
    if let Some(b) = &overrides.b_hat {
        if b.nrows() != d.p() || b.ncols() == 0 {
            return Err(RdreamError::ShapeMismatch(format!(
                "b_hat override is {}x{}, expected {} rows",
                b.nrows(),
                b.ncols(),
                d.p()
            )));
        }
        return Ok((b.clone(), None));
    }
    let sdr = run_sdr(d, method, None)?;
    let b = match overrides.q_hat {
        Some(q) if q != sdr.q_hat => estimate_b(&sdr.candidate, q)?,
        _ => sdr.b_hat.clone(),
    };
    Ok((b, Some(sdr)))
}

/// RDREAM on rank scores for a given projection: builds the report pieces
/// that do not depend on how the residuals were produced.
pub(crate) fn projected_rank_test(
    d: &Dataset,
    scores: &RankScores,
    b_hat: &DMatrix<f64>,
    h: f64,
) -> Result<(f64, Chain)> {
    let z = d.x() * b_hat;
    let weights = pairwise_weights(&z, h)?;
    let v_n = vn_statistic(scores, &weights);
    let n = d.n();
    let chain = finish_chain(
        var_from_weights(&weights),
        |var| sn_statistic(v_n, var, n, h),
        n,
    )?;
    Ok((v_n, chain))
}

fn rule_for(method: SdrMethod) -> BandwidthRule {
    match method {
        SdrMethod::Opg => BandwidthRule::OpgTest,
        SdrMethod::Dee => BandwidthRule::DeeTest,
    }
}

pub(crate) fn rule_label(rule: BandwidthRule, overridden: bool) -> String {
    if overridden {
        return "fixed".into();
    }
    match rule {
        BandwidthRule::OpgTest => "1.8*n^(-1/(q+4))".into(),
        BandwidthRule::DeeTest => "0.5*n^(-1/(q+4))".into(),
        BandwidthRule::Rate { constant } => format!("{constant}*n^(-1/(q+4))"),
        BandwidthRule::Fixed(_) => "fixed".into(),
    }
}

/// Robust residual fit followed by the rank transform.
pub fn robust_scores(
    d: &Dataset,
    link: &LinkSpec,
    huber: &HuberConfig,
) -> Result<(FittedModel, RankScores)> {
    let fit = fit_robust(d, link, huber)?;
    let scores = centered_rank_transform(fit.residuals.as_slice())?;
    Ok((fit, scores))
}

/// End-to-end test. OPG/DEE run the RDREAM chain; WQ and GWZ dispatch to
/// the baselines with their own fits and bandwidths.
pub fn rdream_test(
    d: &Dataset,
    link: &LinkSpec,
    method: TestMethod,
    options: &TestOptions,
) -> Result<TestReport> {
    match method {
        TestMethod::Opg => rdream_sdr_test(d, link, SdrMethod::Opg, options),
        TestMethod::Dee => rdream_sdr_test(d, link, SdrMethod::Dee, options),
        TestMethod::Wq => baselines::wq_test(d, link, options),
        TestMethod::Gwz => baselines::gwz_test(d, link, options),
    }
}

fn rdream_sdr_test(
    d: &Dataset,
    link: &LinkSpec,
    method: SdrMethod,
    options: &TestOptions,
) -> Result<TestReport> {
    let (fit, scores) = robust_scores(d, link, &options.huber)?;
    let (b_hat, sdr) = resolve_projection(d, method, &options.overrides)?;
    let q = b_hat.ncols();
    let rule = rule_for(method);
    let h = options
        .overrides
        .h
        .unwrap_or_else(|| bandwidth(rule, d.n(), q));
    if !(h > 0.0) {
        return Err(RdreamError::DegenerateBandwidth(h));
    }
    let (v_n, chain) = projected_rank_test(d, &scores, &b_hat, h)?;

    let mut diagnostics = Vec::new();
    if q > 3 {
        diagnostics.push(format!(
            "q_hat = {q} > 3: kernel test unreliable at this sample size"
        ));
    }
    if chain.var_hat.is_none() {
        diagnostics.push(RdreamError::DegenerateVariance.to_string());
    }
    if !fit.converged {
        diagnostics.push("robust fit did not converge; last iterate used".into());
    }
    Ok(TestReport {
        method: match method {
            SdrMethod::Opg => TestMethod::Opg,
            SdrMethod::Dee => TestMethod::Dee,
        },
        n: d.n(),
        p: d.p(),
        v_n,
        var_hat: chain.var_hat,
        s_n: chain.s_n,
        s_n_adj: chain.s_n_adj,
        p_value: chain.p_value,
        q_hat: q,
        b_hat: matrix_rows(&b_hat),
        h,
        bandwidth_rule: rule_label(rule, options.overrides.h.is_some()),
        sdr_method: Some(method),
        sdr_eigenvalues: sdr
            .as_ref()
            .map(|s| s.eigenvalues.iter().copied().collect())
            .unwrap_or_default(),
        ridge_c: sdr.as_ref().map(|s| s.ridge_c),
        h_ref: sdr.as_ref().map(|s| s.h_ref),
        prefit_bandwidth: sdr.as_ref().and_then(|s| s.prefit_bandwidth),
        size_adjustment: size_adjustment_factor(d.n()),
        reject_at: decisions(chain.s_n_adj, &options.alphas),
        fit: FitSummary::of(&fit, true),
        diagnostics,
    })
}

/// Full reports as y[index] sweeps `y_grid`, all other data fixed.
pub fn sensitivity_reports(
    d: &Dataset,
    link: &LinkSpec,
    method: TestMethod,
    index: usize,
    y_grid: &[f64],
    options: &TestOptions,
) -> Result<Vec<TestReport>> {
    if index >= d.n() {
        return Err(RdreamError::InvalidConfig(format!(
            "observation index {index} out of range for n = {}",
            d.n()
        )));
    }
    y_grid
        .iter()
        .map(|&y0| {
            let mut y = d.y().clone();
            y[index] = y0;
            rdream_test(&d.with_response(y)?, link, method, options)
        })
        .collect()
}

/// S̃ₙ as y[index] sweeps `y_grid`. Degenerate variance yields NaN at that
/// grid point.
pub fn sensitivity_curve(
    d: &Dataset,
    link: &LinkSpec,
    method: TestMethod,
    index: usize,
    y_grid: &[f64],
    options: &TestOptions,
) -> Result<Vec<f64>> {
    Ok(
        sensitivity_reports(d, link, method, index, y_grid, options)?
            .into_iter()
            .map(|r| r.s_n_adj.unwrap_or(f64::NAN))
            .collect(),
    )
}
