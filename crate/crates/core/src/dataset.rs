//! Data ingestion and design-matrix assembly.
//!
//! Observations are stored row-major: row `i` of the design matrix is the
//! regressor vector of observation `i`. When an intercept is requested it is
//! prepended, so design points read `(1, x2, ..., xd)`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value threshold used by the rank check.
pub const RANK_TOLERANCE: f64 = 1e-10;

pub const INTERCEPT_NAME: &str = "(intercept)";

/// Response vector plus an `n x d` design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    d: usize,
    column_names: Vec<String>,
    intercept: bool,
}

impl Dataset {
    /// Builds a dataset from a response and row-major regressor rows.
    pub fn new(y: Vec<f64>, rows: Vec<Vec<f64>>, column_names: Vec<String>) -> Result<Self> {
        let d = column_names.len();
        if rows.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} responses but {} regressor rows",
                y.len(),
                rows.len()
            )));
        }
        let mut x = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Dimension(format!(
                    "row {} has {} entries, expected {d}",
                    i + 1,
                    row.len()
                )));
            }
            x.extend_from_slice(row);
        }
        Self::from_flat(y, x, column_names)
    }

    /// Builds a dataset from a response and a flat row-major matrix.
    pub fn from_flat(y: Vec<f64>, x: Vec<f64>, column_names: Vec<String>) -> Result<Self> {
        let d = column_names.len();
        let n = y.len();
        if d == 0 {
            return Err(Error::Dimension("at least one regressor is required".into()));
        }
        if x.len() != n * d {
            return Err(Error::Dimension(format!(
                "design matrix has {} entries, expected {n} x {d}",
                x.len()
            )));
        }
        if n < d + 1 {
            return Err(Error::Dimension(format!("n = {n} must exceed d = {d}")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i + 1, column: 0 });
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / d + 1,
                column: k % d + 1,
            });
        }
        let intercept = column_names.first().map(String::as_str) == Some(INTERCEPT_NAME);
        if intercept && (0..n).any(|i| x[i * d] != 1.0) {
            return Err(Error::Dimension("intercept column must be all ones".into()));
        }
        Ok(Self {
            y,
            x,
            d,
            column_names,
            intercept,
        })
    }

    /// Convenience constructor that prepends an intercept column.
    pub fn with_intercept(y: Vec<f64>, regressors: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        let rows = regressors
            .into_iter()
            .map(|r| std::iter::once(1.0).chain(r).collect())
            .collect();
        let mut column_names = vec![INTERCEPT_NAME.to_string()];
        column_names.extend(names);
        Self::new(y, rows, column_names)
    }

    /// Intercept-only dataset (no regressors).
    pub fn intercept_only(y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::from_flat(y, vec![1.0; n], vec![INTERCEPT_NAME.to_string()])
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    /// Flat row-major design matrix.
    pub fn design(&self) -> &[f64] {
        &self.x
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    /// Restricts the dataset to the given observation indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut y = Vec::with_capacity(indices.len());
        let mut x = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            y.push(self.y[i]);
            x.extend_from_slice(self.row(i));
        }
        Self::from_flat(y, x, self.column_names.clone())
    }

    /// Same design, new response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_flat(y, self.x.clone(), self.column_names.clone())
    }

    /// Writes the dataset back out as CSV with the response first.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, response_name: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let skip = usize::from(self.intercept);
        let mut header = vec![response_name.to_string()];
        header.extend(self.column_names[skip..].iter().cloned());
        w.write_record(&header)?;
        for (yi, row) in self.y.iter().zip(self.rows()) {
            let mut rec = vec![format!("{yi:?}")];
            rec.extend(row[skip..].iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    /// Diagnostics for the design matrix. Never mutates the dataset.
    pub fn validate(&self) -> Vec<Diagnostic> {
        validate(self)
    }
}

/// A point at which the conditional mode is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint(Vec<f64>);

impl DesignPoint {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Dimension("design point is empty".into()));
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, column: j + 1 });
        }
        Ok(Self(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.0.len() == d {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "design point has length {}, data has d = {d}",
                self.0.len()
            )))
        }
    }

    pub fn dot(&self, beta: &[f64]) -> f64 {
        dot(&self.0, beta)
    }
}

impl TryFrom<Vec<f64>> for DesignPoint {
    type Error = Error;

    fn try_from(x: Vec<f64>) -> Result<Self> {
        Self::new(x)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Loads a CSV file with a header row.
///
/// The response column is pulled out; every other column becomes a regressor
/// in file order. With `add_intercept` a column of ones is prepended.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str, add_intercept: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, response_column, add_intercept)
}

/// Like [`load_csv`] but from any reader.
pub fn read_csv<R: std::io::Read>(reader: R, response_column: &str, add_intercept: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let response_idx = header
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingColumn(response_column.to_string()))?;

    let mut names = Vec::new();
    if add_intercept {
        names.push(INTERCEPT_NAME.to_string());
    }
    names.extend(
        header
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != response_idx)
            .map(|(_, h)| h.clone()),
    );

    let mut y = Vec::new();
    let mut x = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if add_intercept {
            x.push(1.0);
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
                row,
                column: header[j].clone(),
                value: cell.to_string(),
            })?;
            if j == response_idx {
                y.push(value);
            } else {
                x.push(value);
            }
        }
    }
    Dataset::from_flat(y, x, names)
}

/// Findings reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    RankDeficient { rank: usize, d: usize },
    DuplicateRows { count: usize },
    ConstantColumn { column: String, value: f64 },
}

/// Numerical rank of the design matrix (singular values above
/// [`RANK_TOLERANCE`] times the largest).
pub fn design_rank(data: &Dataset) -> usize {
    let m = DMatrix::from_row_slice(data.n(), data.d(), data.design());
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

pub fn validate(data: &Dataset) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let rank = design_rank(data);
    if rank < data.d() {
        out.push(Diagnostic::RankDeficient { rank, d: data.d() });
    }

    let mut keyed: Vec<(Vec<u64>, u64)> = (0..data.n())
        .map(|i| {
            (
                data.row(i).iter().map(|v| v.to_bits()).collect(),
                data.y()[i].to_bits(),
            )
        })
        .collect();
    keyed.sort_unstable();
    let dups = keyed.windows(2).filter(|w| w[0] == w[1]).count();
    if dups > 0 {
        out.push(Diagnostic::DuplicateRows { count: dups });
    }

    let skip = usize::from(data.has_intercept());
    for j in skip..data.d() {
        let first = data.row(0)[j];
        if data.column(j).all(|v| v == first) {
            out.push(Diagnostic::ConstantColumn {
                column: data.column_names()[j].clone(),
                value: first,
            });
        }
    }
    out
}
