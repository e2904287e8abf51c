//! Variational Bayes blind source separation: Normal per-instance source
//! posteriors under a Jensen-bounded logistic source prior, a blockwise
//! Normal mixing-matrix posterior, hyperparameter updates, and the structure
//! sweep over the number of sources.

mod alignment;
mod engine;
mod steps;

pub use alignment::{signed_permutation_error, SignedAssignment};
pub use engine::{fit, fit_all, free_energy, reconstruct_sources, BssModel, BssSweep};
pub use steps::{
    alpha_update, jensen_bound, lambda_update, mixing_update, source_fixed_point,
    source_precision, update_correlations, AlphaMode, FixedPointOperator,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VbError};
use crate::linalg::is_spd;

/// Mixing-matrix posterior and hyperparameters: posterior mean `a_bar`
/// (d x m), the d per-row m x m covariance blocks of the posterior (rows of A
/// are uncorrelated with each other by construction, so no cross-row storage
/// exists), the prior precision `alpha` of the mixing-matrix elements, and
/// per-sensor noise precisions `lambdas`.
#[derive(Debug, Clone)]
pub struct BssState {
    pub a_bar: DMatrix<f64>,
    pub sigma_blocks: Vec<DMatrix<f64>>,
    pub alpha: f64,
    pub lambdas: DVector<f64>,
}

impl BssState {
    pub fn validate(&self) -> Result<()> {
        let (d, m) = self.a_bar.shape();
        if self.sigma_blocks.len() != d {
            return Err(VbError::DimensionMismatch(format!(
                "{} covariance blocks for {d} sensors",
                self.sigma_blocks.len()
            )));
        }
        for (i, block) in self.sigma_blocks.iter().enumerate() {
            if block.nrows() != m || !is_spd(block) {
                return Err(VbError::InvalidParameter(format!(
                    "covariance block {i} is not an SPD {m}x{m} matrix"
                )));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(VbError::InvalidParameter(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.lambdas.len() != d || self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(VbError::InvalidParameter(
                "noise precisions must be positive and finite, one per sensor".into(),
            ));
        }
        Ok(())
    }

    pub fn n_sensors(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.a_bar.ncols()
    }

    /// sum_i lambda_i Sigma_i, the source-space correction induced by the
    /// mixing-matrix posterior covariance.
    pub fn covariance_correction(&self) -> DMatrix<f64> {
        let m = self.n_sources();
        let mut total = DMatrix::zeros(m, m);
        for (i, block) in self.sigma_blocks.iter().enumerate() {
            total += block * self.lambdas[i];
        }
        total
    }

    /// E[tr A^T A] = tr(a_bar^T a_bar) + sum of block traces.
    pub fn expected_tr_ata(&self) -> f64 {
        self.a_bar.norm_squared() + self.sigma_blocks.iter().map(|b| b.trace()).sum::<f64>()
    }
}

/// Per-instance source posterior q(x_n) = Normal(rho_n, Gamma): means stacked
/// as rows of `rho` (N x m) and the shared precision `gamma` (the optimal
/// variational precision is instance-independent).
#[derive(Debug, Clone)]
pub struct SourcePosterior {
    pub rho: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl SourcePosterior {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.nrows() != self.rho.ncols() || !is_spd(&self.gamma) {
            return Err(VbError::InvalidParameter(
                "source precision must be SPD with one row per source".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rho.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.nrows() == 0
    }

    pub fn n_sources(&self) -> usize {
        self.rho.ncols()
    }
}

/// Source-space correlation statistics of the current posterior:
/// `c_yx = sum_n y_n rho_n^T / N`, `c_xx = sum_n (rho_n rho_n^T + Gamma^-1) / N`,
/// and the per-sensor ridge-regularized `c_xx_i = c_xx + alpha/(lambda_i N) I`.
#[derive(Debug, Clone)]
pub struct SourceCorrelations {
    pub c_yx: DMatrix<f64>,
    pub c_xx: DMatrix<f64>,
    pub c_xx_i: Vec<DMatrix<f64>>,
    /// Number of instances the sums were taken over.
    pub n: usize,
}

/// Configuration of the separation engine.
#[derive(Debug, Clone)]
pub struct BssConfig {
    pub max_iter: usize,
    /// Relative free-energy change below which the fit stops.
    pub tol: f64,
    /// Fixed-point solver budget per instance.
    pub inner_max_iter: usize,
    /// Fixed-point residual norm target.
    pub inner_tol: f64,
    /// Step damping of the fixed-point solver, in (0, 1].
    pub damping: f64,
    pub alpha_mode: AlphaMode,
    /// Re-estimate the noise precisions each iteration instead of keeping
    /// them fixed at their configured values.
    pub update_lambdas: bool,
    /// Iterations to wait before the first noise-precision update, so the
    /// source model stabilizes before residuals are trusted.
    pub lambda_burn_in: usize,
    /// Initial mixing-element prior precision.
    pub alpha_init: f64,
    /// Fixed noise precisions; None uses 1 / sample variance per sensor.
    pub lambdas: Option<DVector<f64>>,
    /// Guardrail for diverging hyperparameter updates.
    pub hyper_cap: f64,
    /// Kill the slow source-scale mode each iteration by an exact line
    /// maximization of F along A -> A S, x -> S^-1 x.
    pub scale_acceleration: bool,
}

impl Default for BssConfig {
    fn default() -> Self {
        BssConfig {
            max_iter: 5000,
            tol: 1e-8,
            inner_max_iter: 500,
            inner_tol: 1e-8,
            damping: 0.5,
            alpha_mode: AlphaMode::Stationary,
            update_lambdas: false,
            lambda_burn_in: 20,
            alpha_init: 1.0,
            lambdas: None,
            hyper_cap: 1e12,
            scale_acceleration: true,
        }
    }
}
