use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rdream_core::report::{curve_points, write_curve_csv, write_table_csv, CurveAxis};
use rdream_core::simulation::{DEFAULT_REPS, FULL_REPS};
use rdream_core::{
    rdream_test, run_monte_carlo, scale_columns, sensitivity_reports, ContaminationSpec, Dataset,
    Family, MonteCarloConfig, PowerTable, ScenarioSpec, TestMethod, TestOptions, TestReport,
};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_csv, IngestSummary};
use crate::link::resolve_link;
use crate::{CurveAxisArg, DataArgs, Format, SensitivityArgs, SimulateArgs, TestArgs};

/// Resolved settings shared by `test` and `sensitivity`.
#[derive(Debug, Serialize)]
struct DataConfig {
    data: String,
    response: String,
    covariates: Vec<String>,
    link: String,
    preprocess: bool,
    bandwidth: Option<f64>,
    q: Option<usize>,
}

#[derive(Debug, Serialize)]
struct TestConfig {
    command: &'static str,
    #[serde(flatten)]
    data: DataConfig,
    method: TestMethod,
    alpha: f64,
    seed: u64,
    format: &'static str,
}

#[derive(Debug, Serialize)]
struct TestOutput<'a> {
    config: &'a TestConfig,
    ingest: &'a IngestSummary,
    reject: Option<bool>,
    report: &'a TestReport,
}

#[derive(Debug, Serialize)]
struct SimulateConfig {
    command: &'static str,
    family: Vec<Family>,
    a: Vec<f64>,
    n: Vec<usize>,
    p: Vec<usize>,
    error: String,
    contamination: String,
    rho: Vec<f64>,
    method: Vec<TestMethod>,
    reps: usize,
    alpha: f64,
    seed: u64,
    format: &'static str,
    curve_axis: &'static str,
}

#[derive(Debug, Serialize)]
struct SimulateOutput<'a> {
    config: &'a SimulateConfig,
    rows: &'a [rdream_core::PowerRow],
}

#[derive(Debug, Serialize)]
struct SensitivityConfig {
    command: &'static str,
    #[serde(flatten)]
    data: DataConfig,
    method: Vec<TestMethod>,
    index: usize,
    y_min: f64,
    y_max: f64,
    points: usize,
    format: &'static str,
}

#[derive(Debug, Clone, Serialize)]
struct SensitivityPoint {
    y0: f64,
    method: TestMethod,
    /// Kernel statistic before standardization.
    statistic: f64,
    s_n_adj: f64,
}

#[derive(Debug, Serialize)]
struct SensitivityOutput<'a> {
    config: &'a SensitivityConfig,
    ingest: &'a IngestSummary,
    points: &'a [SensitivityPoint],
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

/// Runs `body` against the output file, or stdout when no path is given.
fn with_output(
    path: &Option<PathBuf>,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> CliResult<()> {
    let write_err = |p: &Path, e: io::Error| CliError::Write {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| write_err(p, e))?;
            let mut out = BufWriter::new(file);
            body(&mut out)
                .and_then(|_| out.flush())
                .map_err(|e| write_err(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            body(&mut out).map_err(|e| write_err(Path::new("<stdout>"), e))
        }
    }
}

fn to_io(e: impl std::fmt::Display) -> io::Error {
    io::Error::other(e.to_string())
}

fn load(args: &DataArgs) -> CliResult<(Dataset, IngestSummary, DataConfig)> {
    if let Some(h) = args.bandwidth {
        if !(h > 0.0) {
            return Err(CliError::Usage(format!(
                "--bandwidth must be positive, got {h}"
            )));
        }
    }
    let (raw, summary) = ingest_csv(&args.data, &args.response, &args.covariates)?;
    if let Some(q) = args.q {
        if q == 0 || q > raw.p() {
            return Err(CliError::Usage(format!(
                "--q must lie in 1..={}, got {q}",
                raw.p()
            )));
        }
    }
    let data = if args.no_preprocess {
        raw
    } else {
        scale_columns(&raw)?.centered_response()
    };
    let config = DataConfig {
        data: args.data.display().to_string(),
        response: args.response.clone(),
        covariates: summary.covariates.clone(),
        link: args.link.clone(),
        preprocess: !args.no_preprocess,
        bandwidth: args.bandwidth,
        q: args.q,
    };
    Ok((data, summary, config))
}

fn options_for(args: &DataArgs, alpha: Option<f64>) -> TestOptions {
    let mut options = TestOptions::default();
    if let Some(a) = alpha {
        if !options.alphas.contains(&a) {
            options.alphas.push(a);
            options.alphas.sort_by(f64::total_cmp);
        }
    }
    options.overrides.h = args.bandwidth;
    options.overrides.q_hat = args.q;
    options
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

pub fn cmd_test(args: &TestArgs) -> CliResult<u8> {
    check_alpha(args.alpha)?;
    let link = resolve_link(&args.data.link)?;
    let (data, summary, data_config) = load(&args.data)?;
    let options = options_for(&args.data, Some(args.alpha));
    let report = rdream_test(&data, &link, args.method, &options)?;
    let config = TestConfig {
        command: "test",
        data: data_config,
        method: args.method,
        alpha: args.alpha,
        seed: args.seed,
        format: format_name(args.format),
    };
    let reject = report.rejects(args.alpha);
    with_output(&args.output, |out| match args.format {
        Format::Json => {
            let doc = TestOutput {
                config: &config,
                ingest: &summary,
                reject,
                report: &report,
            };
            serde_json::to_writer_pretty(&mut *out, &doc).map_err(to_io)?;
            writeln!(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["key", "value"])?;
            let config_json = serde_json::to_value(&config).map_err(to_io)?;
            for (k, v) in config_json.as_object().into_iter().flatten() {
                let v = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                w.write_record([format!("config.{k}"), v])?;
            }
            w.write_record([
                "ingest.rows_read".to_string(),
                summary.rows_read.to_string(),
            ])?;
            w.write_record([
                "ingest.rows_dropped".to_string(),
                summary.rows_dropped.to_string(),
            ])?;
            w.write_record([
                "reject".to_string(),
                reject.map(|r| r.to_string()).unwrap_or_default(),
            ])?;
            for (k, v) in report.to_records() {
                w.write_record([k, v])?;
            }
            w.flush()
        }
    })?;
    if summary.rows_dropped > 0 {
        eprintln!(
            "note: dropped {} of {} rows with missing or non-numeric cells",
            summary.rows_dropped, summary.rows_read
        );
    }
    if report.s_n_adj.is_none() {
        eprintln!("error: {}", rdream_core::RdreamError::DegenerateVariance);
        return Ok(3);
    }
    Ok(0)
}

fn build_grid(args: &SimulateArgs) -> CliResult<Vec<ScenarioSpec>> {
    let explicit: Option<ContaminationSpec> = match args.contamination.trim() {
        "default" => None,
        token => Some(
            token
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid contamination '{token}'")))?,
        ),
    };
    let mut grid = Vec::new();
    for &family in &args.family {
        let ps = if args.p.is_empty() {
            vec![family.default_p()]
        } else {
            args.p.clone()
        };
        let scheme = explicit.unwrap_or_else(|| family.default_contamination());
        let schemes: Vec<ContaminationSpec> = if args.rho.is_empty() {
            vec![scheme]
        } else {
            args.rho
                .iter()
                .map(|&rate| ContaminationSpec { rate, ..scheme })
                .collect()
        };
        for &p in &ps {
            for contamination in &schemes {
                for &n in &args.n {
                    for &a in &args.a {
                        let spec = ScenarioSpec::new(family, a, n)
                            .with_p(p)
                            .with_error(args.error)
                            .with_contamination(*contamination);
                        spec.validate()
                            .map_err(|e| CliError::Usage(e.to_string()))?;
                        grid.push(spec);
                    }
                }
            }
        }
    }
    Ok(grid)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<u8> {
    check_alpha(args.alpha)?;
    if args.method.is_empty() {
        return Err(CliError::Usage("--method needs at least one test".into()));
    }
    let reps = args
        .reps
        .unwrap_or(if args.full { FULL_REPS } else { DEFAULT_REPS });
    if reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if args.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let grid = build_grid(args)?;
    let mut mc = MonteCarloConfig::new(reps, args.alpha, args.seed);
    mc.threads = args.threads;
    let table = run_monte_carlo(&grid, &args.method, &mc)?;

    let config = SimulateConfig {
        command: "simulate",
        family: args.family.clone(),
        a: args.a.clone(),
        n: args.n.clone(),
        p: if args.p.is_empty() {
            args.family.iter().map(Family::default_p).collect()
        } else {
            args.p.clone()
        },
        error: args.error.to_string(),
        contamination: args.contamination.clone(),
        rho: args.rho.clone(),
        method: args.method.clone(),
        reps,
        alpha: args.alpha,
        seed: args.seed,
        format: format_name(args.format),
        curve_axis: match args.curve_axis {
            CurveAxisArg::A => "a",
            CurveAxisArg::Rho => "rho",
        },
    };
    write_table(&table, &config, args)?;
    if let Some(path) = &args.curve {
        let axis = match args.curve_axis {
            CurveAxisArg::A => CurveAxis::A,
            CurveAxisArg::Rho => CurveAxis::Rho,
        };
        let points = curve_points(&table, axis);
        with_output(&Some(path.clone()), |out| {
            write_curve_csv(&points, out).map_err(to_io)
        })?;
    }
    let invalid = table.rows.iter().filter(|r| !r.valid).count();
    if invalid > 0 {
        eprintln!(
            "note: {invalid} cell(s) marked invalid (test failures on 1% or more of replications)"
        );
    }
    Ok(0)
}

fn write_table(table: &PowerTable, config: &SimulateConfig, args: &SimulateArgs) -> CliResult<()> {
    with_output(&args.output, |out| match args.format {
        Format::Csv => {
            let line = format!("config {}", serde_json::to_string(config).map_err(to_io)?);
            write_table_csv(table, out, &[line]).map_err(to_io)
        }
        Format::Json => {
            let doc = SimulateOutput {
                config,
                rows: &table.rows,
            };
            serde_json::to_writer_pretty(&mut *out, &doc).map_err(to_io)?;
            writeln!(out)
        }
    })
}

pub fn cmd_sensitivity(args: &SensitivityArgs) -> CliResult<u8> {
    if args.points < 2 || !(args.y_max > args.y_min) {
        return Err(CliError::Usage(
            "need --points >= 2 and --y-max greater than --y-min".into(),
        ));
    }
    let link = resolve_link(&args.data.link)?;
    let (data, summary, data_config) = load(&args.data)?;
    let options = options_for(&args.data, None);
    let step = (args.y_max - args.y_min) / (args.points - 1) as f64;
    let grid: Vec<f64> = (0..args.points)
        .map(|k| args.y_min + step * k as f64)
        .collect();
    let mut points = Vec::new();
    for &method in &args.method {
        let reports = sensitivity_reports(&data, &link, method, args.index, &grid, &options)?;
        points.extend(grid.iter().zip(reports).map(|(&y0, r)| SensitivityPoint {
            y0,
            method,
            statistic: r.v_n,
            s_n_adj: r.s_n_adj.unwrap_or(f64::NAN),
        }));
    }
    let config = SensitivityConfig {
        command: "sensitivity",
        data: data_config,
        method: args.method.clone(),
        index: args.index,
        y_min: args.y_min,
        y_max: args.y_max,
        points: args.points,
        format: format_name(args.format),
    };
    with_output(&args.output, |out| match args.format {
        Format::Csv => {
            writeln!(
                out,
                "# config {}",
                serde_json::to_string(&config).map_err(to_io)?
            )?;
            let mut w = csv::Writer::from_writer(out);
            for p in &points {
                w.serialize(p).map_err(to_io)?;
            }
            w.flush()
        }
        Format::Json => {
            let doc = SensitivityOutput {
                config: &config,
                ingest: &summary,
                points: &points,
            };
            serde_json::to_writer_pretty(&mut *out, &doc).map_err(to_io)?;
            writeln!(out)
        }
    })?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;
    use rdream_core::ErrorDist;

    fn simulate_args(extra: &[&str]) -> SimulateArgs {
        #[derive(Parser)]
        struct Wrap {
            #[command(flatten)]
            inner: SimulateArgs,
        }
        let mut argv = vec!["x"];
        argv.extend_from_slice(extra);
        Wrap::parse_from(argv).inner
    }

    #[test]
    fn grid_is_family_p_rho_n_a() {
        let args = simulate_args(&[
            "--family", "H21,H22", "--p", "2,4", "--n", "100,200", "--a", "0,1",
        ]);
        let grid = build_grid(&args).unwrap();
        assert_eq!(grid.len(), 16);
        assert_eq!(
            (grid[0].family, grid[0].p, grid[0].n, grid[0].a),
            (Family::H21, 2, 100, 0.0)
        );
        assert_eq!((grid[1].n, grid[1].a), (100, 1.0));
        assert_eq!(grid[15].family, Family::H22);
    }

    #[test]
    fn rho_sets_rate() {
        let args = simulate_args(&["--family", "H31", "--rho", "0,0.1", "--n", "200"]);
        let grid = build_grid(&args).unwrap();
        assert_eq!(
            grid[1].contamination.to_string(),
            "replace(exponential)@0.1"
        );
        assert_eq!(grid[0].contamination.count(200), 0);
    }

    #[test]
    fn bad_p_names_value() {
        let args = simulate_args(&["--family", "H11", "--p", "3"]);
        let err = build_grid(&args).unwrap_err().to_string();
        assert!(err.contains("p = 3"), "{err}");
        let args = simulate_args(&["--family", "H11", "--contamination", "sprinkle"]);
        assert!(build_grid(&args)
            .unwrap_err()
            .to_string()
            .contains("sprinkle"));
    }

    #[test]
    fn error_dist_flag() {
        let args = simulate_args(&["--family", "H13", "--error", "lognormal"]);
        assert_eq!(args.error, ErrorDist::lognormal());
    }
}
