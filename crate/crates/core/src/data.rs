//! Labelled observation matrices and their CSV form.
//!
//! The CSV layout is a header row whose first cell is ignored and whose
//! remaining cells are the column labels, followed by one row per case with
//! the row label in the first column.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An `n x m` matrix of finite observations with unique row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        let (n, m) = values.shape();
        if n == 0 || m == 0 {
            return Err(Error::input("data matrix must have at least one row and one column"));
        }
        if row_labels.len() != n {
            return Err(Error::input(format!("{} row labels for {} rows", row_labels.len(), n)));
        }
        if col_labels.len() != m {
            return Err(Error::input(format!("{} column labels for {} columns", col_labels.len(), m)));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % n, pos / n);
            return Err(Error::input(format!(
                "non-finite value at row '{}', column '{}'",
                row_labels[i], col_labels[j]
            )));
        }
        check_unique(&row_labels, "row")?;
        check_unique(&col_labels, "column")?;
        Ok(DataMatrix { values, row_labels, col_labels })
    }

    /// Builds a matrix with generated labels `r0, r1, ...` and `v0, v1, ...`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let rows = (0..values.nrows()).map(|i| format!("r{i}")).collect();
        let cols = (0..values.ncols()).map(|j| format!("v{j}")).collect();
        Self::new(values, rows, cols)
    }

    /// Convenience constructor from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::input("ragged rows"));
        }
        Self::from_values(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::input("csv needs a label column and at least one value column"));
        }
        let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut flat = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::input(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    header.len()
                )));
            }
            row_labels.push(rec[0].to_string());
            for (j, field) in rec.iter().skip(1).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::input(format!("row {} column '{}': cannot parse '{}'", line + 2, col_labels[j], field))
                })?;
                flat.push(v);
            }
        }
        let n = row_labels.len();
        let m = col_labels.len();
        let values = DMatrix::from_row_slice(n, m, &flat);
        Self::new(values, row_labels, col_labels)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(file)
    }

    pub fn to_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_labelled_matrix(writer, "label", &self.col_labels, &self.row_labels, &self.values)
    }
}

pub(crate) fn write_labelled_matrix<W: std::io::Write>(
    writer: W,
    corner: &str,
    col_labels: &[String],
    row_labels: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(col_labels.len() + 1);
    header.push(corner.to_string());
    header.extend(col_labels.iter().cloned());
    wtr.write_record(&header)?;
    for (i, label) in row_labels.iter().enumerate() {
        let mut rec = Vec::with_capacity(values.ncols() + 1);
        rec.push(label.clone());
        rec.extend((0..values.ncols()).map(|j| values[(i, j)].to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

fn check_unique(labels: &[String], kind: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::input(format!("duplicate {kind} label '{l}'")));
        }
    }
    Ok(())
}
