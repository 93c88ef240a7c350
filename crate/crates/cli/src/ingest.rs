//! Wide-format price CSV ingestion: header `date,TICKER1,...,TICKERd`,
//! ISO dates, decimal-point numbers.
//!
//! No imputation: the calculus assumes a synchronized grid, so gaps and
//! irregularities are the caller's problem to clean up beforehand. Bad cells
//! are hard errors naming the offending row and column.

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use ndarray::Array2;
use pathwise_spt::grid::{SampledPath, TimeGrid};

use crate::CliError;

/// A parsed price table: the path (grid labeled in days) plus the tickers.
#[derive(Debug)]
pub struct IngestedPrices {
    pub path: SampledPath,
    pub tickers: Vec<String>,
    pub first_date: NaiveDate,
}

pub fn ingest_csv(path: &Path) -> Result<IngestedPrices, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::Io(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    if headers.len() < 2 {
        return Err(CliError::Ingest(format!(
            "{}: need a date column plus at least one ticker",
            path.display()
        )));
    }
    if !headers[0].eq_ignore_ascii_case("date") {
        return Err(CliError::Ingest(format!(
            "{}: first column must be `date`, got `{}`",
            path.display(),
            &headers[0]
        )));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let d = tickers.len();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let rowno = i + 2; // header is line 1
        let record =
            record.map_err(|e| CliError::Ingest(format!("{}: row {rowno}: {e}", path.display())))?;
        if record.len() != d + 1 {
            return Err(CliError::Ingest(format!(
                "{}: row {rowno}: expected {} fields, got {}",
                path.display(),
                d + 1,
                record.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| {
            CliError::Ingest(format!(
                "{}: row {rowno}, column `date`: cannot parse `{}` as ISO date: {e}",
                path.display(),
                &record[0]
            ))
        })?;
        if let Some(&last) = dates.last() {
            if date == last {
                return Err(CliError::Ingest(format!(
                    "{}: row {rowno}: duplicate date {date}",
                    path.display()
                )));
            }
            if date < last {
                return Err(CliError::Ingest(format!(
                    "{}: row {rowno}: dates must be strictly increasing ({date} after {last})",
                    path.display()
                )));
            }
        }
        let mut row = Vec::with_capacity(d);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let value: f64 = cell.parse().map_err(|e| {
                CliError::Ingest(format!(
                    "{}: row {rowno}, column `{}`: cannot parse `{cell}`: {e}",
                    path.display(),
                    tickers[j]
                ))
            })?;
            if !(value > 0.0) || !value.is_finite() {
                return Err(CliError::Ingest(format!(
                    "{}: row {rowno}, column `{}`: price {value} is not strictly positive",
                    path.display(),
                    tickers[j]
                )));
            }
            row.push(value);
        }
        dates.push(date);
        rows.push(row);
    }

    if dates.len() < 2 {
        return Err(CliError::Ingest(format!(
            "{}: need at least 2 data rows, got {}",
            path.display(),
            dates.len()
        )));
    }

    let first = dates[0];
    let times: Vec<f64> = dates.iter().map(|d| (*d - first).num_days() as f64).collect();
    let grid = TimeGrid::new(times)
        .map_err(|e| CliError::Ingest(format!("{}: {e}", path.display())))?
        .with_day_count("days");
    let mut values = Array2::zeros((d, rows.len()));
    for (k, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            values[(i, k)] = v;
        }
    }
    let path_data = SampledPath::new(Arc::new(grid), values)
        .map_err(|e| CliError::Ingest(e.to_string()))?;
    Ok(IngestedPrices { path: path_data, tickers, first_date: first })
}
