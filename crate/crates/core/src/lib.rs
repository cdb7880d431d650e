//! Robust dimension-reduction adaptive-to-model lack-of-fit tests for
//! single-index regression models, with the WQ and GWZ comparison tests and
//! a Monte Carlo engine for size/power studies.
//!
//! The usual entry point is [`rdream_test`]:
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use rdream_core::{rdream_test, validate_dataset, LinkSpec, TestMethod, TestOptions};
//!
//! let x = DMatrix::from_fn(60, 2, |i, j| ((i * 7 + j * 13) % 17) as f64 / 4.0);
//! let y = DVector::from_fn(60, |i, _| x[(i, 0)] - x[(i, 1)] + ((i * 5) % 7) as f64 / 7.0);
//! let data = validate_dataset(y, x).unwrap();
//! let report = rdream_test(&data, &LinkSpec::linear(), TestMethod::Dee, &TestOptions::default()).unwrap();
//! assert!(report.v_n.is_finite());
//! ```

pub mod baselines;
pub mod chisq;
pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod rank;
pub mod rdream;
pub mod report;
pub mod robust;
pub mod sdr;
pub mod simulation;

pub use baselines::{gwz_statistic, wq_statistic, StatisticChain};
pub use chisq::{chi2_1_critical, chi2_1_sf};
pub use data::{
    scale_columns, standardize_covariates, validate_dataset, Dataset, FittedModel, LinkGradient,
    LinkKind, LinkSpec, StandardizationInfo,
};
pub use error::{RdreamError, Result};
pub use kernel::{bandwidth, pairwise_weights, BandwidthRule, KernelSpec, PairwiseWeights};
pub use rank::{centered_rank_transform, RankScores};
pub use rdream::{
    rdream_test, sensitivity_curve, sensitivity_reports, size_adjusted, sn_statistic, var_estimate,
    vn_statistic, TestMethod, TestOptions, TestOverrides, TestReport,
};
pub use report::{emit_report, parse_report, ReportFormat};
pub use robust::{fit_m_linear, fit_m_single_index, fit_robust, HuberConfig};
pub use sdr::{estimate_b, rre_select_q, run_sdr, SdrMethod, SdrResult};
pub use simulation::{
    generate_scenario, run_monte_carlo, ContaminationSpec, ErrorDist, Family, GroundTruth,
    MonteCarloConfig, PowerRow, PowerTable, ScenarioSpec,
};
