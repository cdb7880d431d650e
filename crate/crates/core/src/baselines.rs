//! Comparison tests: the full-dimensional rank test Ṽₙ on all p covariates
//! (WQ) and the residual-based projected test Tₙᴳᵂᶻ (GWZ).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{standardization_of, Dataset, FittedModel, LinkKind, LinkSpec};
use crate::error::{RdreamError, Result};
use crate::kernel::{bandwidth, pairwise_weights, BandwidthRule};
use crate::rank::RankScores;
use crate::rdream::{
    decisions, finish_chain, matrix_rows, resolve_projection, robust_scores, rule_label,
    size_adjustment_factor, u_statistic, FitSummary, TestMethod, TestOptions, TestReport,
};
use crate::robust::{fit_m_single_index, fit_ols_linear, HuberConfig};
use crate::sdr::SdrMethod;

/// WQ bandwidth h = 0.5·n^(−1/(p+4)).
pub const WQ_RULE: BandwidthRule = BandwidthRule::Rate { constant: 0.5 };
/// GWZ bandwidth h = 0.5·n^(−1/(q̂+4)), the rule of the DEE-based rank test.
pub const GWZ_RULE: BandwidthRule = BandwidthRule::DeeTest;
/// Projection estimator used by GWZ.
pub const GWZ_SDR: SdrMethod = SdrMethod::Dee;

/// A kernel statistic with its standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticChain {
    pub statistic: f64,
    pub var_hat: Option<f64>,
    pub s_n: Option<f64>,
    pub s_n_adj: Option<f64>,
    pub p_value: Option<f64>,
}

/// Ṽₙ on all p standardized covariates, standardized as
/// ((n−1)/n)·n·h^(p/2)·Ṽₙ/√V̂ar_p and size-adjusted.
pub fn wq_statistic(scores: &RankScores, x: &DMatrix<f64>, h: f64) -> Result<StatisticChain> {
    let n = scores.len();
    if x.nrows() != n {
        return Err(RdreamError::ShapeMismatch(format!(
            "{} scores but {} covariate rows",
            n,
            x.nrows()
        )));
    }
    let z = standardization_of(x)?.apply(x);
    let p = z.ncols();
    let weights = pairwise_weights(&z, h)?;
    let v = u_statistic(&scores.scores, &weights);
    let nf = n as f64;
    let hp = h.powi(p as i32);
    let var = hp * weights.sum_of_squares() / (72.0 * nf * (nf - 1.0));
    let var = if var > 0.0 {
        Ok(var)
    } else {
        Err(RdreamError::DegenerateVariance)
    };
    let chain = finish_chain(
        var,
        |var| (nf - 1.0) / nf * nf * hp.sqrt() * v / var.sqrt(),
        n,
    )?;
    Ok(StatisticChain {
        statistic: v,
        var_hat: chain.var_hat,
        s_n: chain.s_n,
        s_n_adj: chain.s_n_adj,
        p_value: chain.p_value,
    })
}

/// Tₙᴳᵂᶻ on raw residuals with projection `b_hat`, standardized as
/// n·h^(1/2)·T/√V̂_G where
/// V̂_G = (2/(n(n−1))) Σᵢ Σ_{j≠i} h^(−q̂) K²(·) êᵢ² êⱼ², and size-adjusted.
pub fn gwz_statistic(
    d: &Dataset,
    fit: &FittedModel,
    b_hat: &DMatrix<f64>,
    h: f64,
) -> Result<StatisticChain> {
    let n = d.n();
    let residuals = fit.residuals.as_slice();
    let z = d.x() * b_hat;
    let weights = pairwise_weights(&z, h)?;
    let t = u_statistic(residuals, &weights);
    let nf = n as f64;
    let hq = h.powi(b_hat.ncols() as i32);
    let squares: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    let var = 2.0 * hq * weights.squared_quadratic_form(&squares) / (nf * (nf - 1.0));
    let var = if var > 0.0 {
        Ok(var)
    } else {
        Err(RdreamError::DegenerateVariance)
    };
    let chain = finish_chain(var, |var| nf * h.sqrt() * t / var.sqrt(), n)?;
    Ok(StatisticChain {
        statistic: t,
        var_hat: chain.var_hat,
        s_n: chain.s_n,
        s_n_adj: chain.s_n_adj,
        p_value: chain.p_value,
    })
}

/// Least-squares fit of the null model (Huber with an unreachable constant
/// for nonlinear links).
pub fn fit_least_squares(d: &Dataset, link: &LinkSpec, huber: &HuberConfig) -> Result<FittedModel> {
    match link.kind() {
        LinkKind::Linear => fit_ols_linear(d),
        LinkKind::UserSingleIndex => {
            let cfg = HuberConfig {
                tuning_k: f64::MAX.sqrt(),
                ..*huber
            };
            match fit_m_single_index(d, link, None, &cfg) {
                Err(RdreamError::NonConvergence { last, .. }) => Ok(*last),
                other => other,
            }
        }
    }
}

fn degenerate_notes(chain: &StatisticChain, fit: &FittedModel) -> Vec<String> {
    let mut notes = Vec::new();
    if chain.var_hat.is_none() {
        notes.push(RdreamError::DegenerateVariance.to_string());
    }
    if !fit.converged {
        notes.push("fit did not converge; last iterate used".into());
    }
    notes
}

pub(crate) fn wq_test(d: &Dataset, link: &LinkSpec, options: &TestOptions) -> Result<TestReport> {
    let (fit, scores) = robust_scores(d, link, &options.huber)?;
    let p = d.p();
    let h = options
        .overrides
        .h
        .unwrap_or_else(|| bandwidth(WQ_RULE, d.n(), p));
    let chain = wq_statistic(&scores, d.x(), h)?;
    Ok(TestReport {
        method: TestMethod::Wq,
        n: d.n(),
        p,
        v_n: chain.statistic,
        var_hat: chain.var_hat,
        s_n: chain.s_n,
        s_n_adj: chain.s_n_adj,
        p_value: chain.p_value,
        q_hat: p,
        b_hat: Vec::new(),
        h,
        bandwidth_rule: rule_label(WQ_RULE, options.overrides.h.is_some()).replace('q', "p"),
        sdr_method: None,
        sdr_eigenvalues: Vec::new(),
        ridge_c: None,
        h_ref: None,
        prefit_bandwidth: None,
        size_adjustment: size_adjustment_factor(d.n()),
        reject_at: decisions(chain.s_n_adj, &options.alphas),
        diagnostics: degenerate_notes(&chain, &fit),
        fit: FitSummary::of(&fit, true),
    })
}

pub(crate) fn gwz_test(d: &Dataset, link: &LinkSpec, options: &TestOptions) -> Result<TestReport> {
    let fit = fit_least_squares(d, link, &options.huber)?;
    let (b_hat, sdr) = resolve_projection(d, GWZ_SDR, &options.overrides)?;
    let q = b_hat.ncols();
    let h = options
        .overrides
        .h
        .unwrap_or_else(|| bandwidth(GWZ_RULE, d.n(), q));
    let chain = gwz_statistic(d, &fit, &b_hat, h)?;
    Ok(TestReport {
        method: TestMethod::Gwz,
        n: d.n(),
        p: d.p(),
        v_n: chain.statistic,
        var_hat: chain.var_hat,
        s_n: chain.s_n,
        s_n_adj: chain.s_n_adj,
        p_value: chain.p_value,
        q_hat: q,
        b_hat: matrix_rows(&b_hat),
        h,
        bandwidth_rule: rule_label(GWZ_RULE, options.overrides.h.is_some()),
        sdr_method: Some(GWZ_SDR),
        sdr_eigenvalues: sdr
            .as_ref()
            .map(|s| s.eigenvalues.iter().copied().collect())
            .unwrap_or_default(),
        ridge_c: sdr.as_ref().map(|s| s.ridge_c),
        h_ref: sdr.as_ref().map(|s| s.h_ref),
        prefit_bandwidth: None,
        size_adjustment: size_adjustment_factor(d.n()),
        reject_at: decisions(chain.s_n_adj, &options.alphas),
        diagnostics: degenerate_notes(&chain, &fit),
        fit: FitSummary::of(&fit, false),
    })
}
