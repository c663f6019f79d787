//! CSV ingestion with z-score standardisation of the predictors.
//!
//! Input is a rectangular, all-numeric CSV with a header row. Every column
//! other than the response is a predictor and is centred and divided by its
//! population standard deviation (divisor `n`). The response is left on its
//! own scale unless asked otherwise.

use std::path::Path;

use emlreg::simbench::Dataset;
use emlreg::{Error, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Numeric CSV contents, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        self.rows.iter().map(move |r| r[j])
    }
}

pub fn read_numeric_csv(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(CliError::file(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .zip(&headers)
            .map(|(cell, name)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    field: format!("row {}, column {name}", i + 1),
                    message: format!("`{cell}` is not a finite number"),
                }),
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

/// Centre and scale of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    fn fit(column: &str, values: impl Iterator<Item = f64> + Clone) -> Result<Self> {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let sd = (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!("column `{column}` is constant")).into());
        }
        Ok(Self {
            column: column.to_string(),
            mean,
            sd,
        })
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
}

/// Everything needed to map a raw CSV onto the model's input scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub response: String,
    pub predictors: Vec<Standardization>,
    /// Present when the response was standardised too.
    pub response_scale: Option<Standardization>,
}

impl Scaler {
    pub fn fit(table: &Table, response: &str, standardize_response: bool) -> Result<Self> {
        let yj = table.column_index(response).ok_or_else(|| {
            CliError::usage(format!(
                "response column `{response}` not found (columns: {})",
                table.headers.join(", ")
            ))
        })?;
        if table.headers.len() < 2 {
            return Err(CliError::usage("the CSV has no predictor columns"));
        }
        if table.rows.is_empty() {
            return Err(CliError::InsufficientData("the CSV has no data rows".into()));
        }
        let predictors = table
            .headers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != yj)
            .map(|(j, name)| Standardization::fit(name, table.column(j)))
            .collect::<Result<Vec<_>>>()?;
        let response_scale = if standardize_response {
            Some(Standardization::fit(response, table.column(yj))?)
        } else {
            None
        };
        Ok(Self {
            response: response.to_string(),
            predictors,
            response_scale,
        })
    }

    /// Standardised dataset; columns are matched by name.
    pub fn apply(&self, table: &Table) -> Result<Dataset> {
        let find = |name: &str| {
            table
                .column_index(name)
                .ok_or_else(|| Error::Schema(format!("column `{name}` is missing")))
        };
        let yj = find(&self.response)?;
        let cols = self
            .predictors
            .iter()
            .map(|s| find(&s.column))
            .collect::<Result<Vec<_>, Error>>()?;
        let n = table.rows.len();
        let mut x = Vec::with_capacity(n * cols.len());
        let mut y = Vec::with_capacity(n);
        for row in &table.rows {
            x.extend(cols.iter().zip(&self.predictors).map(|(&j, s)| s.apply(row[j])));
            y.push(match &self.response_scale {
                Some(s) => s.apply(row[yj]),
                None => row[yj],
            });
        }
        Ok(Dataset::new(Matrix::new(n, cols.len(), x)?, y)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(CliError::file(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::file(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Read `path`, fit the standardisation on it and apply it.
pub fn ingest_csv(path: &Path, response: &str, standardize_response: bool) -> Result<(Dataset, Scaler)> {
    let table = read_numeric_csv(path)?;
    let scaler = Scaler::fit(&table, response, standardize_response)?;
    let data = scaler.apply(&table)?;
    Ok((data, scaler))
}
