//! CSV / JSON serialization of power tables and figure curves.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RdreamError, Result};
use crate::simulation::{PowerRow, PowerTable};

/// Column order of the CSV layout.
pub const POWER_COLUMNS: [&str; 16] = [
    "family",
    "error",
    "a",
    "n",
    "method",
    "rate",
    "reps",
    "seed_base",
    "p",
    "contamination",
    "rho",
    "error_scale",
    "alpha",
    "rejections",
    "failures",
    "valid",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = RdreamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(RdreamError::InvalidConfig(format!(
                "unknown format '{other}'"
            ))),
        }
    }
}

fn csv_err(e: csv::Error) -> RdreamError {
    RdreamError::Parse(e.to_string())
}

fn io_err(path: &Path, e: impl fmt::Display) -> RdreamError {
    RdreamError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes the table as CSV. Each preamble line is emitted first as a
/// `# ` comment; readers skip those lines.
pub fn write_table_csv<W: Write>(
    table: &PowerTable,
    mut out: W,
    preamble: &[String],
) -> Result<()> {
    for line in preamble {
        writeln!(out, "# {line}").map_err(|e| RdreamError::Parse(e.to_string()))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(POWER_COLUMNS).map_err(csv_err)?;
    for row in &table.rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| RdreamError::Parse(e.to_string()))
}

pub fn read_table_csv<R: Read>(input: R) -> Result<PowerTable> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(POWER_COLUMNS.iter().copied()) {
        return Err(RdreamError::Parse(format!(
            "unexpected header: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let rows = r
        .deserialize::<PowerRow>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err)?;
    Ok(PowerTable { rows })
}

pub fn write_table_json<W: Write>(table: &PowerTable, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, table).map_err(|e| RdreamError::Parse(e.to_string()))
}

pub fn read_table_json<R: Read>(input: R) -> Result<PowerTable> {
    serde_json::from_reader(input).map_err(|e| RdreamError::Parse(e.to_string()))
}

/// Writes a table to `path` in the given format.
pub fn emit_report(table: &PowerTable, format: ReportFormat, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_table_csv(table, &mut out, &[])?,
        ReportFormat::Json => write_table_json(table, &mut out)?,
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Reads a table written by [`emit_report`].
pub fn parse_report(path: &Path, format: ReportFormat) -> Result<PowerTable> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let input = BufReader::new(file);
    match format {
        ReportFormat::Csv => read_table_csv(input),
        ReportFormat::Json => read_table_json(input),
    }
}

/// Horizontal axis of a power curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveAxis {
    A,
    Rho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

/// One series per (family, method, n, p, error), points sorted by x.
pub fn curve_points(table: &PowerTable, axis: CurveAxis) -> Vec<CurvePoint> {
    let mut points: Vec<CurvePoint> = table
        .rows
        .iter()
        .map(|r| CurvePoint {
            x: match axis {
                CurveAxis::A => r.a,
                CurveAxis::Rho => r.rho,
            },
            y: r.rate,
            series: format!("{}-{}-n{}-p{}-{}", r.family, r.method, r.n, r.p, r.error),
        })
        .collect();
    points.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    points
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    if points.is_empty() {
        w.write_record(["x", "y", "series"]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| RdreamError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdream::TestMethod;
    use crate::simulation::Family;

    fn row(a: f64, method: TestMethod, rate: f64) -> PowerRow {
        PowerRow {
            family: Family::H11,
            error: "normal".into(),
            a,
            n: 100,
            method,
            rate,
            reps: 7,
            seed_base: u64::MAX - 3,
            p: 8,
            contamination: "add(5)@0.1".into(),
            rho: 0.1,
            error_scale: 1.0,
            alpha: 0.05,
            rejections: 1,
            failures: 0,
            valid: true,
        }
    }

    fn sample() -> PowerTable {
        PowerTable {
            rows: vec![
                row(0.0, TestMethod::Opg, 1.0 / 7.0),
                row(0.2, TestMethod::Gwz, 0.1 + 0.2),
            ],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_table_csv(&sample(), &mut buf, &["config {\"x\":1}".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config"));
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("family,error,a,n,method,rate,reps,seed_base"));
        assert_eq!(read_table_csv(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_table_json(&sample(), &mut buf).unwrap();
        assert_eq!(read_table_json(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn empty_table_has_header_only() {
        let mut buf = Vec::new();
        write_table_csv(&PowerTable::default(), &mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1);
        assert!(read_table_csv(buf.as_slice()).unwrap().rows.is_empty());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let path = dir.path().join(format!("t.{format}"));
            emit_report(&sample(), format, &path).unwrap();
            assert_eq!(parse_report(&path, format).unwrap(), sample());
        }
        assert!(matches!(
            parse_report(&dir.path().join("missing.csv"), ReportFormat::Csv),
            Err(RdreamError::Io { .. })
        ));
    }

    #[test]
    fn curves_sorted_by_series_then_x() {
        let mut t = sample();
        t.rows.push(row(0.1, TestMethod::Opg, 0.5));
        let pts = curve_points(&t, CurveAxis::A);
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0].series, "H11-gwz-n100-p8-normal");
        assert_eq!((pts[1].x, pts[2].x), (0.0, 0.1));
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,y,series\n"));
    }
}
