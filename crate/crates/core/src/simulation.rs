//! Scenario generators for the size/power studies and a deterministic,
//! parallel Monte Carlo engine.
//!
//! Replication `r` of a grid cell draws its data from
//! `derive_seed(seed_base, cell_id, r)`, where `cell_id` is an FNV-1a hash of
//! the cell's canonical key. Rejection counts are reduced in replication
//! order, so a table depends only on `(seed_base, grid, reps)` and not on the
//! number of worker threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chisq::chi2_1_critical;
use crate::data::{validate_dataset, Dataset, LinkSpec};
use crate::error::{RdreamError, Result};
use crate::rank::digest_f64;
use crate::rdream::{rdream_test, TestMethod, TestOptions};

/// Desk-scale replication count.
pub const DEFAULT_REPS: usize = 500;
/// Replication count of the published tables.
pub const FULL_REPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    H11,
    H12,
    H13,
    H14,
    H21,
    H22,
    H23,
    H31,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::H11,
        Family::H12,
        Family::H13,
        Family::H14,
        Family::H21,
        Family::H22,
        Family::H23,
        Family::H31,
    ];

    pub fn study(&self) -> u8 {
        match self {
            Family::H11 | Family::H12 | Family::H13 | Family::H14 => 1,
            Family::H21 | Family::H22 | Family::H23 => 2,
            Family::H31 => 3,
        }
    }

    pub fn allowed_p(&self) -> &'static [usize] {
        match self.study() {
            1 => &[8],
            2 => &[2, 4],
            _ => &[8, 12],
        }
    }

    pub fn default_p(&self) -> usize {
        match self.study() {
            1 => 8,
            2 => 4,
            _ => 8,
        }
    }

    /// Contamination used by the study this family belongs to; Study 3
    /// varies the rate ρ, starting from 0.
    pub fn default_contamination(&self) -> ContaminationSpec {
        match self.study() {
            1 => ContaminationSpec::add_constant(5.0, 0.10),
            2 => ContaminationSpec::replace(OutlierModel::Cosine, 0.10),
            _ => ContaminationSpec::replace(OutlierModel::Exponential, 0.0),
        }
    }

    /// Link of the null model (a = 0).
    pub fn null_link(&self) -> LinkSpec {
        match self {
            Family::H14 => LinkSpec::exponential(),
            _ => LinkSpec::linear(),
        }
    }

    /// Regression function at index values u1 = β₁ᵀx, u2 = β₂ᵀx.
    fn mean(&self, a: f64, u1: f64, u2: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            Family::H11 => u1 + a * (-1.5 * u1).exp(),
            Family::H12 => u1 + 1.5 * a * u1.powi(3),
            Family::H13 => u1 + 6.0 * a * (0.8 * PI * u1).cos(),
            Family::H14 => 2.5 * (0.5 * u1).exp() + 1.5 * a * u1.powi(3),
            Family::H21 => u1 + 1.5 * a * u2.powi(3),
            Family::H22 => u1 + 0.3 * a * (4.0 * u2.powi(3) + u2 * u2),
            Family::H23 => u1 + 4.0 * a * (-u2).exp(),
            Family::H31 => u1 + 2.0 * a * u1.powi(3),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Family {
    type Err = RdreamError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Family::ALL
            .into_iter()
            .find(|f| f.to_string().eq_ignore_ascii_case(t))
            .ok_or_else(|| RdreamError::InvalidConfig(format!("unknown family '{t}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorDist {
    StdNormal,
    /// exp(N(0, log_sd²)) standardized to mean 0, variance 1.
    StdLogNormal {
        log_sd: f64,
    },
}

impl ErrorDist {
    pub fn lognormal() -> ErrorDist {
        ErrorDist::StdLogNormal { log_sd: 0.25 }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        match *self {
            ErrorDist::StdNormal => z,
            ErrorDist::StdLogNormal { log_sd } => {
                let s2 = log_sd * log_sd;
                let mean = (0.5 * s2).exp();
                let sd = ((s2.exp() - 1.0) * s2.exp()).sqrt();
                ((log_sd * z).exp() - mean) / sd
            }
        }
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorDist::StdNormal => write!(f, "normal"),
            ErrorDist::StdLogNormal { log_sd } => write!(f, "lognormal({log_sd})"),
        }
    }
}

impl FromStr for ErrorDist {
    type Err = RdreamError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "normal" {
            return Ok(ErrorDist::StdNormal);
        }
        if t == "lognormal" {
            return Ok(ErrorDist::lognormal());
        }
        if let Some(inner) = t
            .strip_prefix("lognormal(")
            .and_then(|r| r.strip_suffix(')'))
        {
            let log_sd: f64 = inner.parse().map_err(|_| {
                RdreamError::InvalidConfig(format!("bad log-normal scale '{inner}'"))
            })?;
            if log_sd > 0.0 {
                return Ok(ErrorDist::StdLogNormal { log_sd });
            }
        }
        Err(RdreamError::InvalidConfig(format!(
            "unknown error distribution '{s}'"
        )))
    }
}

/// Outlier-generating models for response replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutlierModel {
    /// y = 5.5·cos(3π β₁ᵀx) + ε
    Cosine,
    /// y = 6·exp(−|βᵀx|) + ε
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContaminationKind {
    None,
    AddConstant { value: f64 },
    ReplaceByModel { model: OutlierModel },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub kind: ContaminationKind,
    /// Fraction ρ of responses affected; round(ρ·n) indices without replacement.
    pub rate: f64,
}

impl ContaminationSpec {
    pub fn none() -> Self {
        ContaminationSpec {
            kind: ContaminationKind::None,
            rate: 0.0,
        }
    }

    pub fn add_constant(value: f64, rate: f64) -> Self {
        ContaminationSpec {
            kind: ContaminationKind::AddConstant { value },
            rate,
        }
    }

    pub fn replace(model: OutlierModel, rate: f64) -> Self {
        ContaminationSpec {
            kind: ContaminationKind::ReplaceByModel { model },
            rate,
        }
    }

    pub fn count(&self, n: usize) -> usize {
        match self.kind {
            ContaminationKind::None => 0,
            _ => (self.rate * n as f64).round() as usize,
        }
    }
}

impl fmt::Display for ContaminationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ContaminationKind::None => write!(f, "none"),
            ContaminationKind::AddConstant { value } => write!(f, "add({value})@{}", self.rate),
            ContaminationKind::ReplaceByModel { model } => {
                let name = match model {
                    OutlierModel::Cosine => "cosine",
                    OutlierModel::Exponential => "exponential",
                };
                write!(f, "replace({name})@{}", self.rate)
            }
        }
    }
}

impl FromStr for ContaminationSpec {
    type Err = RdreamError;

    /// Parses the `Display` form: `none`, `add(5)@0.1`,
    /// `replace(cosine)@0.1`, `replace(exponential)@0.05`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || RdreamError::InvalidConfig(format!("bad contamination '{s}'"));
        if t == "none" {
            return Ok(ContaminationSpec::none());
        }
        let (head, rate) = t.rsplit_once('@').ok_or_else(bad)?;
        let rate: f64 = rate.parse().map_err(|_| bad())?;
        let (name, arg) = head
            .strip_suffix(')')
            .and_then(|h| h.split_once('('))
            .ok_or_else(bad)?;
        match name {
            "add" => Ok(ContaminationSpec::add_constant(
                arg.parse().map_err(|_| bad())?,
                rate,
            )),
            "replace" => {
                let model = match arg {
                    "cosine" => OutlierModel::Cosine,
                    "exponential" => OutlierModel::Exponential,
                    _ => return Err(bad()),
                };
                Ok(ContaminationSpec::replace(model, rate))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: Family,
    pub a: f64,
    pub n: usize,
    pub p: usize,
    pub error: ErrorDist,
    /// Multiplies the error draw (1 in the published studies).
    pub error_scale: f64,
    pub contamination: ContaminationSpec,
}

impl ScenarioSpec {
    /// Study defaults: the family's first tabulated p, normal errors, and
    /// the study's contamination scheme.
    pub fn new(family: Family, a: f64, n: usize) -> Self {
        ScenarioSpec {
            family,
            a,
            n,
            p: family.default_p(),
            error: ErrorDist::StdNormal,
            error_scale: 1.0,
            contamination: family.default_contamination(),
        }
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn with_error(mut self, error: ErrorDist) -> Self {
        self.error = error;
        self
    }

    pub fn with_error_scale(mut self, s: f64) -> Self {
        self.error_scale = s;
        self
    }

    pub fn with_contamination(mut self, c: ContaminationSpec) -> Self {
        self.contamination = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0) {
            return Err(RdreamError::InvalidConfig(format!(
                "a must be >= 0, got {}",
                self.a
            )));
        }
        if !self.family.allowed_p().contains(&self.p) {
            return Err(RdreamError::InvalidConfig(format!(
                "p = {} not allowed for {} (expected one of {:?})",
                self.p,
                self.family,
                self.family.allowed_p()
            )));
        }
        if self.n < 10 {
            return Err(RdreamError::InvalidConfig(format!(
                "n = {} too small",
                self.n
            )));
        }
        if !(0.0..=0.5).contains(&self.contamination.rate) {
            return Err(RdreamError::InvalidConfig(format!(
                "contamination rate {} outside [0, 0.5]",
                self.contamination.rate
            )));
        }
        if !(self.error_scale >= 0.0) {
            return Err(RdreamError::InvalidConfig(
                "error scale must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Canonical key; its hash identifies the cell for seeding.
    pub fn key(&self) -> String {
        format!(
            "{}|a={}|n={}|p={}|e={}|s={}|c={}",
            self.family, self.a, self.n, self.p, self.error, self.error_scale, self.contamination
        )
    }

    pub fn cell_id(&self) -> u64 {
        let bytes = self.key();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// β₁ = 1/√p and, for Study 2, β₂ with the first p/2 entries 1/√(p/2).
    pub fn directions(&self) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        let beta1 = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        let half = p / 2;
        let beta2 = DVector::from_fn(p, |i, _| {
            if i < half {
                1.0 / (half as f64).sqrt()
            } else {
                0.0
            }
        });
        (beta1, beta2)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let (b1, b2) = self.directions();
        if self.family.study() == 2 && self.a != 0.0 {
            let mut b = DMatrix::zeros(self.p, 2);
            b.set_column(0, &b1);
            b.set_column(1, &b2);
            GroundTruth { b, q: 2 }
        } else {
            GroundTruth {
                b: DMatrix::from_column_slice(self.p, 1, b1.as_slice()),
                q: 1,
            }
        }
    }
}

/// True projection matrix and structural dimension of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub b: DMatrix<f64>,
    pub q: usize,
}

impl GroundTruth {
    /// Orthonormal basis of span(B).
    pub fn orthonormal_basis(&self) -> DMatrix<f64> {
        self.b.clone().qr().q()
    }
}

/// Draws one dataset: X ~ N(0, I_p), then errors, then contamination.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    let p = spec.p;
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let (b1, b2) = spec.directions();
    let u1 = &x * &b1;
    let u2 = &x * &b2;
    let mut y = DVector::from_fn(n, |i, _| {
        spec.family.mean(spec.a, u1[i], u2[i]) + spec.error_scale * spec.error.draw(&mut rng)
    });

    let k = spec.contamination.count(n);
    if k > 0 {
        let mut idx = sample(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        for i in idx {
            match spec.contamination.kind {
                ContaminationKind::None => {}
                ContaminationKind::AddConstant { value } => y[i] += value,
                ContaminationKind::ReplaceByModel { model } => {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    y[i] = match model {
                        OutlierModel::Cosine => {
                            5.5 * (3.0 * std::f64::consts::PI * u1[i]).cos() + e
                        }
                        OutlierModel::Exponential => 6.0 * (-u1[i].abs()).exp() + e,
                    };
                }
            }
        }
    }
    Ok((validate_dataset(y, x)?, spec.ground_truth()))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed for replication `rep` of cell `cell_id`.
pub fn derive_seed(seed_base: u64, cell_id: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed_base) ^ cell_id) ^ rep)
}

/// Result of one test on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RepOutcome {
    /// Adjusted statistic S̃ₙ.
    Statistic(f64),
    Failed,
}

/// Runs every method on the dataset of replication `rep`.
pub fn run_replication(
    spec: &ScenarioSpec,
    methods: &[TestMethod],
    seed_base: u64,
    rep: u64,
    options: &TestOptions,
) -> Result<Vec<RepOutcome>> {
    let seed = derive_seed(seed_base, spec.cell_id(), rep);
    let (data, _) = generate_scenario(spec, seed)?;
    let link = spec.family.null_link();
    Ok(methods
        .iter()
        .map(|&m| match rdream_test(&data, &link, m, options) {
            Ok(report) => report
                .s_n_adj
                .map_or(RepOutcome::Failed, RepOutcome::Statistic),
            Err(_) => RepOutcome::Failed,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub reps: usize,
    pub alpha: f64,
    pub seed_base: u64,
    /// Worker cap; `None` uses the global pool.
    pub threads: Option<usize>,
    pub options: TestOptions,
}

impl MonteCarloConfig {
    pub fn new(reps: usize, alpha: f64, seed_base: u64) -> Self {
        MonteCarloConfig {
            reps,
            alpha,
            seed_base,
            threads: None,
            options: TestOptions::default(),
        }
    }
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| RdreamError::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

/// Adjusted statistics of every replication of one cell, per method
/// (outer index = method).
pub fn simulate_statistics(
    spec: &ScenarioSpec,
    methods: &[TestMethod],
    cfg: &MonteCarloConfig,
) -> Result<Vec<Vec<RepOutcome>>> {
    spec.validate()?;
    let per_rep: Vec<Result<Vec<RepOutcome>>> = with_pool(cfg.threads, || {
        (0..cfg.reps as u64)
            .into_par_iter()
            .map(|r| run_replication(spec, methods, cfg.seed_base, r, &cfg.options))
            .collect()
    })?;
    let mut by_method = vec![Vec::with_capacity(cfg.reps); methods.len()];
    for rep in per_rep {
        for (m, outcome) in rep?.into_iter().enumerate() {
            by_method[m].push(outcome);
        }
    }
    Ok(by_method)
}

/// One (cell, method) entry of a power table. Column order of the CSV
/// layout follows the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub family: Family,
    pub error: String,
    pub a: f64,
    pub n: usize,
    pub method: TestMethod,
    pub rate: f64,
    pub reps: usize,
    pub seed_base: u64,
    pub p: usize,
    pub contamination: String,
    pub rho: f64,
    pub error_scale: f64,
    pub alpha: f64,
    pub rejections: usize,
    pub failures: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn find(&self, family: Family, a: f64, n: usize, method: TestMethod) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.family == family && r.a == a && r.n == n && r.method == method)
    }
}

/// Summarizes outcomes into a row. Failures are dropped from the
/// denominator only when they are under 1% of replications; otherwise the
/// row is marked invalid.
pub fn summarize(
    spec: &ScenarioSpec,
    method: TestMethod,
    outcomes: &[RepOutcome],
    cfg: &MonteCarloConfig,
) -> PowerRow {
    let critical = chi2_1_critical(cfg.alpha);
    let mut rejections = 0;
    let mut failures = 0;
    for o in outcomes {
        match o {
            RepOutcome::Statistic(s) => {
                if s * s >= critical {
                    rejections += 1;
                }
            }
            RepOutcome::Failed => failures += 1,
        }
    }
    let reps = outcomes.len();
    let ok = reps - failures;
    let valid = failures == 0 || failures * 100 < reps;
    PowerRow {
        family: spec.family,
        error: spec.error.to_string(),
        a: spec.a,
        n: spec.n,
        method,
        rate: if ok > 0 {
            rejections as f64 / ok as f64
        } else {
            0.0
        },
        reps,
        seed_base: cfg.seed_base,
        p: spec.p,
        contamination: spec.contamination.to_string(),
        rho: spec.contamination.rate,
        error_scale: spec.error_scale,
        alpha: cfg.alpha,
        rejections,
        failures,
        valid,
    }
}

/// Empirical rejection rates for every (cell, method) pair.
pub fn run_monte_carlo(
    grid: &[ScenarioSpec],
    methods: &[TestMethod],
    cfg: &MonteCarloConfig,
) -> Result<PowerTable> {
    if cfg.reps == 0 {
        return Err(RdreamError::InvalidConfig("reps must be >= 1".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(RdreamError::InvalidConfig(format!(
            "alpha {} outside (0, 1)",
            cfg.alpha
        )));
    }
    let mut rows = Vec::with_capacity(grid.len() * methods.len());
    for spec in grid {
        let outcomes = simulate_statistics(spec, methods, cfg)?;
        for (m, method) in methods.iter().enumerate() {
            rows.push(summarize(spec, *method, &outcomes[m], cfg));
        }
    }
    Ok(PowerTable { rows })
}

/// Digest of a table, handy for determinism checks.
pub fn table_digest(table: &PowerTable) -> u64 {
    let values: Vec<f64> = table
        .rows
        .iter()
        .flat_map(|r| [r.rate, r.rejections as f64, r.failures as f64])
        .collect();
    digest_f64(&values)
}
