//! Observed datasets: an N x d real matrix with named columns, plus the CSV
//! encoding shared by the generators and the command-line tools.
//!
//! CSV layout: one header row with column names, then one row per instance.
//! Values are written with 17 significant digits so files round-trip f64
//! exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Result, VbError};

/// The observed set Y: N instances of dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    columns: Vec<String>,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>, columns: Vec<String>) -> Result<Self> {
        if columns.len() != values.ncols() {
            return Err(VbError::DimensionMismatch(format!(
                "{} column names for {} columns",
                columns.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VbError::InvalidParameter(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Dataset { values, columns })
    }

    /// Build with default column names y0..y{d-1}.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let columns = (0..values.ncols()).map(|j| format!("y{j}")).collect();
        Dataset::new(values, columns)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, n: usize) -> DVector<f64> {
        self.values.row(n).transpose()
    }

    /// Sample mean over instances.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.len().max(1) as f64;
        let mut mean = DVector::zeros(self.dim());
        for r in 0..self.len() {
            mean += self.row(r);
        }
        mean / n
    }

    /// Sample covariance (denominator N), with a small ridge if degenerate.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.len().max(1) as f64;
        let mean = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        for r in 0..self.len() {
            let c = self.row(r) - &mean;
            cov.ger(1.0 / n, &c, &c, 1.0);
        }
        crate::linalg::symmetrize(&mut cov);
        // Guard against zero-variance columns.
        let ridge = 1e-12 * (1.0 + cov.trace().abs() / d as f64);
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        cov
    }

    /// Copy with one extra instance appended.
    pub fn with_appended(&self, y: &DVector<f64>) -> Result<Dataset> {
        if y.len() != self.dim() {
            return Err(VbError::DimensionMismatch(format!(
                "appended point has dimension {}, dataset has {}",
                y.len(),
                self.dim()
            )));
        }
        let mut values = DMatrix::zeros(self.len() + 1, self.dim());
        values.rows_mut(0, self.len()).copy_from(&self.values);
        values
            .row_mut(self.len())
            .copy_from(&RowDVector::from_iterator(y.len(), y.iter().copied()));
        Dataset::new(values, self.columns.clone())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in 0..self.len() {
            for c in 0..self.dim() {
                if c > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", format_value(self.values[(r, c)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| VbError::Parse("empty CSV: missing header".into()))?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        let d = columns.len();
        let mut data = Vec::new();
        let mut n = 0usize;
        for (idx, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d {
                return Err(VbError::Parse(format!(
                    "row {}: expected {} fields, found {}",
                    idx + 2,
                    d,
                    fields.len()
                )));
            }
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|_| {
                    VbError::Parse(format!("row {}: invalid number {f:?}", idx + 2))
                })?;
                data.push(v);
            }
            n += 1;
        }
        Dataset::new(DMatrix::from_row_slice(n, d, &data), columns)
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VbError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Dataset::from_csv_str(&text)
    }
}

/// 17 significant digits: enough to round-trip any f64.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(
            3,
            2,
            &[
                0.1,
                -1.0 / 3.0,
                std::f64::consts::PI,
                1e-300,
                -2.5e17,
                7.0,
            ],
        );
        let ds = Dataset::from_matrix(m).unwrap();
        let text = ds.to_csv_string();
        let back = Dataset::from_csv_str(&text).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let err = Dataset::from_csv_str("a,b\n1.0,2.0\n3.0\n").unwrap_err();
        assert!(matches!(err, VbError::Parse(_)));
    }

    #[test]
    fn append_grows_by_one() {
        let ds = Dataset::from_matrix(DMatrix::from_row_slice(2, 1, &[1.0, 2.0])).unwrap();
        let bigger = ds.with_appended(&DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(bigger.len(), 3);
        assert_eq!(bigger.values()[(2, 0)], 3.0);
    }

    #[test]
    fn covariance_of_unit_data() {
        let ds =
            Dataset::from_matrix(DMatrix::from_row_slice(4, 1, &[-1.0, -1.0, 1.0, 1.0])).unwrap();
        let cov = ds.covariance();
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((ds.mean()[0]).abs() < 1e-15);
    }
}
