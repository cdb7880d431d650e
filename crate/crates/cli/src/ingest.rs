//! CSV loading: header row required, '.' decimals, rows with any missing or
//! non-numeric cell in a used column are dropped and counted.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rdream_core::{validate_dataset, Dataset};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub response: String,
    pub covariates: Vec<String>,
}

/// Reads `path`, using every column except the response when
/// `covariates` is empty.
pub fn ingest_csv(
    path: &Path,
    response: &str,
    covariates: &[String],
) -> CliResult<(Dataset, IngestSummary)> {
    let shown = path.display().to_string();
    if !path.is_file() {
        return Err(CliError::FileNotFound(shown));
    }
    let read_err = |e: csv::Error| CliError::Read {
        path: shown.clone(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(read_err)?;
    let headers = reader.headers().map_err(read_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    };
    let y_col = find(response)?;
    let names: Vec<String> = if covariates.is_empty() {
        headers
            .iter()
            .filter(|h| *h != response)
            .map(str::to_string)
            .collect()
    } else {
        covariates.to_vec()
    };
    if names.is_empty() {
        return Err(CliError::Usage("no covariate columns".into()));
    }
    let x_cols = names
        .iter()
        .map(|n| find(n))
        .collect::<CliResult<Vec<_>>>()?;

    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut rows_read = 0;
    for record in reader.records() {
        let record = record.map_err(read_err)?;
        rows_read += 1;
        let cell = |c: usize| {
            record
                .get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        let y = cell(y_col);
        let row: Option<Vec<f64>> = x_cols.iter().map(|&c| cell(c)).collect();
        if let (Some(y), Some(row)) = (y, row) {
            ys.push(y);
            xs.extend(row);
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(CliError::AllRowsDropped(shown));
    }
    let x = DMatrix::from_row_slice(n, names.len(), &xs);
    let data = validate_dataset(DVector::from_vec(ys), x)?;
    Ok((
        data,
        IngestSummary {
            rows_read,
            rows_dropped: rows_read - n,
            response: response.to_string(),
            covariates: names,
        },
    ))
}
