use nalgebra::{DMatrix, DVector};

use super::KlDivergence;
use crate::error::{Result, VbError};
use crate::linalg::{is_spd, SpdFactor};

/// Multivariate Normal in the precision parametrization: the density exponent
/// is `-(x - mu)^T P (x - mu) / 2` with `P` the precision (inverse covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalParams {
    mu: DVector<f64>,
    precision: DMatrix<f64>,
}

impl NormalParams {
    pub fn new(mu: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if precision.nrows() != mu.len() {
            return Err(VbError::DimensionMismatch(format!(
                "mean of dimension {} with {}x{} precision",
                mu.len(),
                precision.nrows(),
                precision.ncols()
            )));
        }
        if !is_spd(&precision) {
            return Err(VbError::InvalidParameter(
                "Normal precision must be symmetric positive definite".into(),
            ));
        }
        Ok(NormalParams { mu, precision })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// log density at x.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let f = SpdFactor::new(&self.precision, "Normal precision")?;
        let c = x - &self.mu;
        let quad = (&self.precision * &c).dot(&c);
        Ok(0.5 * (f.log_det - self.dim() as f64 * crate::special::LN_2PI) - 0.5 * quad)
    }
}

impl KlDivergence for NormalParams {
    fn kl_divergence(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(VbError::DimensionMismatch(format!(
                "Normal KL between dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let d = self.dim() as f64;
        let fq = SpdFactor::new(&self.precision, "Normal precision (q)")?;
        let fp = SpdFactor::new(&other.precision, "Normal precision (p)")?;
        let diff = &self.mu - &other.mu;
        let quad = (&other.precision * &diff).dot(&diff);
        let trace = (&other.precision * fq.inverse()).trace();
        Ok((0.5 * (trace - d + quad + fq.log_det - fp.log_det)).max(0.0))
    }
}
