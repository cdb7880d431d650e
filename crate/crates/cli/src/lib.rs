//! Command-line front end: `test`, `simulate` and `sensitivity`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rdream_core::{ErrorDist, Family, ReportFormat, TestMethod};

pub mod commands;
pub mod error;
mod ingest;
mod link;

/// Robust dimension-reduction lack-of-fit tests for single-index models.
#[derive(Debug, Parser)]
#[command(name = "rdream", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test a parametric single-index model on a CSV file.
    Test(TestArgs),
    /// Run a size/power simulation grid.
    Simulate(SimulateArgs),
    /// Trace the adjusted statistic as one response sweeps a grid.
    Sensitivity(SensitivityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveAxisArg {
    A,
    Rho,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column name.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Covariate columns (comma separated); default: every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// `linear`, `exponential`, or a JSON link-spec file.
    #[arg(long, default_value = "linear")]
    pub link: String,
    /// Skip column standardization and response centering.
    #[arg(long)]
    pub no_preprocess: bool,
    /// Fixed kernel bandwidth for the test statistic.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Fixed structural dimension.
    #[arg(long)]
    pub q: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "opg")]
    pub method: TestMethod,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Recorded in the report; the test itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub family: Vec<Family>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub a: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n: Vec<usize>,
    /// Covariate dimension; default: the family's first tabulated value.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<usize>,
    /// `normal`, `lognormal`, or `lognormal(<log-sd>)`.
    #[arg(long, default_value = "normal")]
    pub error: ErrorDist,
    /// `default` (the family's study scheme), `none`, `add(5)@0.1`,
    /// `replace(cosine)@0.1`, `replace(exponential)@0.1`.
    #[arg(long, default_value = "default")]
    pub contamination: String,
    /// Contamination rates; overrides the rate of the chosen scheme.
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "opg,dee")]
    pub method: Vec<TestMethod>,
    /// Replications per cell (default 500, or 2000 with --full).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Replication count of the published tables.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Also write (x, y, series) curve data here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "a")]
    pub curve_axis: CurveAxisArg,
    /// Worker threads; does not change results.
    #[arg(long, env = "RDREAM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "opg,gwz")]
    pub method: Vec<TestMethod>,
    /// Row (0-based, after dropping incomplete rows) whose response is swept.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = -1e6, allow_negative_numbers = true)]
    pub y_min: f64,
    #[arg(long, default_value_t = 1e6, allow_negative_numbers = true)]
    pub y_max: f64,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let result = match cli.command {
        Command::Test(args) => commands::cmd_test(&args),
        Command::Simulate(args) => commands::cmd_simulate(&args),
        Command::Sensitivity(args) => commands::cmd_sensitivity(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}
