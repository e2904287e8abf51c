//! Small shared linear-algebra helpers built on nalgebra's Cholesky.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, VbError};

/// Cholesky factorization bundle for a symmetric positive-definite matrix.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    /// log |M|
    pub log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, context: &str) -> Result<Self> {
        let chol = Cholesky::new(m.clone())
            .ok_or_else(|| VbError::Singular(format!("{context}: Cholesky failed")))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(VbError::Numerical(format!(
                "{context}: non-finite log-determinant"
            )));
        }
        Ok(SpdFactor { chol, log_det })
    }

    /// Factorize, adding `jitter * tr(M)/d` to the diagonal once if needed.
    pub fn new_with_jitter(m: &DMatrix<f64>, jitter: f64, context: &str) -> Result<Self> {
        match Self::new(m, context) {
            Ok(f) => Ok(f),
            Err(_) => {
                let d = m.nrows() as f64;
                let bump = jitter * m.trace().abs().max(f64::MIN_POSITIVE) / d;
                let mut patched = m.clone();
                for i in 0..m.nrows() {
                    patched[(i, i)] += bump;
                }
                Self::new(&patched, context)
            }
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }
}

/// Force exact symmetry: (M + M^T)/2.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let nr = m.nrows();
    for i in 0..nr {
        for j in (i + 1)..nr {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let scale = 1.0 + m[(i, j)].abs().max(m[(j, i)].abs());
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Check symmetric positive definiteness via Cholesky.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-9) && Cholesky::new(m.clone()).is_some()
}

/// log-sum-exp with the usual max shift; returns -inf on empty input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
