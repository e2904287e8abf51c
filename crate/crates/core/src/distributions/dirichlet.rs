use nalgebra::DVector;

use super::KlDivergence;
use crate::error::{Result, VbError};
use crate::special::{digamma, ln_gamma};

/// Dirichlet distribution over component probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    lambdas: DVector<f64>,
}

impl DirichletParams {
    pub fn new(lambdas: DVector<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(VbError::InvalidParameter(
                "Dirichlet needs dimension >= 1".into(),
            ));
        }
        for (i, &l) in lambdas.iter().enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(VbError::InvalidParameter(format!(
                    "Dirichlet lambda[{i}] must be positive and finite, got {l}"
                )));
            }
        }
        Ok(DirichletParams { lambdas })
    }

    /// Symmetric Dirichlet with all concentrations equal to `value`.
    pub fn symmetric(dim: usize, value: f64) -> Result<Self> {
        DirichletParams::new(DVector::from_element(dim, value))
    }

    pub fn lambdas(&self) -> &DVector<f64> {
        &self.lambdas
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn total(&self) -> f64 {
        self.lambdas.sum()
    }

    /// Arithmetic means lambda_s / sum(lambda).
    pub fn mean(&self) -> DVector<f64> {
        &self.lambdas / self.total()
    }

    /// E[log pi_s] = Psi(lambda_s) - Psi(sum lambda).
    pub fn expected_log(&self) -> Result<DVector<f64>> {
        let psi_total = digamma(self.total())?;
        let mut out = DVector::zeros(self.dim());
        for (i, &l) in self.lambdas.iter().enumerate() {
            out[i] = digamma(l)? - psi_total;
        }
        Ok(out)
    }
}

/// Geometric mean exp(E[log pi_s]) of each coordinate.
///
/// By Jensen this is strictly below the arithmetic mean lambda_s/sum(lambda).
pub fn dirichlet_geometric_mean(p: &DirichletParams) -> Result<DVector<f64>> {
    Ok(p.expected_log()?.map(f64::exp))
}

/// Posterior concentrations: lambda_s + soft_count_s.
pub fn dirichlet_update(
    prior: &DirichletParams,
    soft_counts: &DVector<f64>,
) -> Result<DirichletParams> {
    if soft_counts.len() != prior.dim() {
        return Err(VbError::DimensionMismatch(format!(
            "{} counts for a Dirichlet of dimension {}",
            soft_counts.len(),
            prior.dim()
        )));
    }
    for (i, &c) in soft_counts.iter().enumerate() {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(VbError::InvalidParameter(format!(
                "soft count[{i}] must be nonnegative and finite, got {c}"
            )));
        }
    }
    DirichletParams::new(prior.lambdas() + soft_counts)
}

impl KlDivergence for DirichletParams {
    fn kl_divergence(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(VbError::DimensionMismatch(format!(
                "Dirichlet KL between dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let tq = self.total();
        let mut kl = ln_gamma(tq)? - ln_gamma(other.total())?;
        let psi_tq = digamma(tq)?;
        for i in 0..self.dim() {
            let (lq, lp) = (self.lambdas[i], other.lambdas[i]);
            kl += ln_gamma(lp)? - ln_gamma(lq)?;
            kl += (lq - lp) * (digamma(lq)? - psi_tq);
        }
        Ok(kl.max(0.0))
    }
}
