//! The separation engine's update operations in closed form.

use nalgebra::{DMatrix, DVector};

use super::{BssConfig, BssState, SourceCorrelations, SourcePosterior};
use crate::dataset::Dataset;
use crate::error::{Result, VbError};
use crate::linalg::{symmetrize, SpdFactor};

/// Which stationary condition the alpha update solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// alpha = E[tr A^T A] / (d m), the published closed form (units of
    /// variance; does not keep the free energy non-decreasing).
    Printed,
    /// alpha = d m / E[tr A^T A], the exact zero of dF/d alpha under the
    /// Gaussian mixing prior. Default.
    #[default]
    Stationary,
}

/// Numerically stable ln cosh.
pub(crate) fn ln_cosh(u: f64) -> f64 {
    let a = u.abs();
    a - std::f64::consts::LN_2 + (-2.0 * a).exp().ln_1p()
}

/// Jensen lower bound on E[ln p(x)] for x ~ Normal(rho, Gamma^-1) with the
/// logistic source density p(x_j) = (1/4) sech^2(x_j / 2):
///
/// ```text
/// bound = m ln(1/4) - 2 sum_j ln cosh(rho_j / 2) - tr(Gamma^-1) / 4
/// ```
///
/// Exact in the zero-variance limit Gamma^-1 -> 0.
pub fn jensen_bound(rho: &DVector<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    if gamma.nrows() != rho.len() {
        return Err(VbError::DimensionMismatch(
            "source precision does not match the mean vector".into(),
        ));
    }
    let trace_inv = SpdFactor::new(gamma, "source precision")?.inverse().trace();
    Ok(jensen_bound_given_trace(rho, trace_inv))
}

pub(crate) fn jensen_bound_given_trace(rho: &DVector<f64>, trace_inv_gamma: f64) -> f64 {
    let m = rho.len() as f64;
    let log_cosh_sum: f64 = rho.iter().map(|&v| ln_cosh(0.5 * v)).sum();
    m * 0.25f64.ln() - 2.0 * log_cosh_sum - 0.25 * trace_inv_gamma
}

/// Empirical correlation statistics of the current source posterior, with
/// the per-sensor alpha/(lambda_i N) ridge applied to `c_xx_i`.
pub fn update_correlations(
    data: &Dataset,
    sp: &SourcePosterior,
    state: &BssState,
) -> Result<SourceCorrelations> {
    let n = data.len();
    let d = data.dim();
    let m = sp.n_sources();
    if sp.len() != n || state.n_sensors() != d || state.n_sources() != m {
        return Err(VbError::DimensionMismatch(
            "data, source posterior and state disagree on shapes".into(),
        ));
    }
    sp.validate()?;

    let gamma_inv = SpdFactor::new(&sp.gamma, "source precision")?.inverse();
    // c_yx = Y^T rho / N, c_xx = rho^T rho / N + Gamma^-1
    let c_yx = data.values().transpose() * &sp.rho / n as f64;
    let mut c_xx = sp.rho.transpose() * &sp.rho / n as f64 + gamma_inv;
    symmetrize(&mut c_xx);

    let mut c_xx_i = Vec::with_capacity(d);
    for i in 0..d {
        let ridge = state.alpha / (state.lambdas[i] * n as f64);
        let mut ci = c_xx.clone();
        for j in 0..m {
            ci[(j, j)] += ridge;
        }
        c_xx_i.push(ci);
    }
    Ok(SourceCorrelations {
        c_yx,
        c_xx,
        c_xx_i,
        n,
    })
}

/// Mixing-matrix posterior from the correlations: row i of the mean is
/// `c_yx[i, :] (c_xx_i)^-1` and covariance block i is `(c_xx_i)^-1 / (lambda_i N)`.
pub fn mixing_update(
    corr: &SourceCorrelations,
    lambdas: &DVector<f64>,
    n_total: usize,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let d = corr.c_yx.nrows();
    let m = corr.c_yx.ncols();
    if lambdas.len() != d || corr.c_xx_i.len() != d {
        return Err(VbError::DimensionMismatch(
            "one noise precision and one regularized correlation per sensor".into(),
        ));
    }
    let mut a_bar = DMatrix::zeros(d, m);
    let mut blocks = Vec::with_capacity(d);
    for i in 0..d {
        let inv = SpdFactor::new(&corr.c_xx_i[i], "regularized source correlation")?.inverse();
        let row = corr.c_yx.row(i) * &inv;
        a_bar.row_mut(i).copy_from(&row);
        let mut block = inv / (lambdas[i] * n_total as f64);
        symmetrize(&mut block);
        blocks.push(block);
    }
    Ok((a_bar, blocks))
}

/// The shared source-posterior precision
/// `Gamma = A^T Lambda A + I/2 + sum_i (c_xx_i)^-1 / N` (instance-independent).
///
/// The I/2 term comes from the Jensen bound's curvature and keeps the result
/// positive definite on its own.
pub fn source_precision(state: &BssState, corr: &SourceCorrelations) -> Result<DMatrix<f64>> {
    let mut correction = DMatrix::zeros(state.n_sources(), state.n_sources());
    for ci in &corr.c_xx_i {
        correction += SpdFactor::new(ci, "regularized source correlation")?.inverse();
    }
    correction /= corr.n as f64;
    Ok(source_precision_with_correction(state, &correction))
}

pub(crate) fn source_precision_with_correction(
    state: &BssState,
    correction: &DMatrix<f64>,
) -> DMatrix<f64> {
    let m = state.n_sources();
    let lam_a = DMatrix::from_fn(state.n_sensors(), m, |i, j| {
        state.lambdas[i] * state.a_bar[(i, j)]
    });
    let mut gamma = state.a_bar.transpose() * lam_a
        + DMatrix::identity(m, m) * 0.5
        + correction;
    symmetrize(&mut gamma);
    gamma
}

/// Shared pieces of the per-instance fixed-point solve: the data term
/// `A^T Lambda`, the correction matrix, and the factored curvature bound
/// `A^T Lambda A + correction + I/4` (the logistic score's slope is at most
/// 1/4, so stepping against this matrix never overshoots the concave
/// objective).
pub struct FixedPointOperator {
    at_lambda: DMatrix<f64>,  // m x d
    correction: DMatrix<f64>, // m x m
    solver: SpdFactor,        // chol(A^T Lambda A + correction + I/4)
}

impl FixedPointOperator {
    /// Correction from the per-sensor regularized correlations (the published
    /// E-step form).
    pub fn from_correlations(state: &BssState, corr: &SourceCorrelations) -> Result<Self> {
        let m = state.n_sources();
        let mut correction = DMatrix::zeros(m, m);
        for ci in &corr.c_xx_i {
            correction += SpdFactor::new(ci, "regularized source correlation")?.inverse();
        }
        correction /= corr.n as f64;
        Self::with_correction(state, correction)
    }

    /// Correction from the stored posterior covariance blocks,
    /// `sum_i lambda_i Sigma_i`; identical to the published form whenever the
    /// state was built from these correlations.
    pub fn from_state(state: &BssState) -> Result<Self> {
        Self::with_correction(state, state.covariance_correction())
    }

    fn with_correction(state: &BssState, mut correction: DMatrix<f64>) -> Result<Self> {
        symmetrize(&mut correction);
        let at_lambda = DMatrix::from_fn(state.n_sources(), state.n_sensors(), |j, i| {
            state.a_bar[(i, j)] * state.lambdas[i]
        });
        let mut quad = &at_lambda * &state.a_bar + &correction;
        symmetrize(&mut quad);
        let m = state.n_sources();
        let bound = &quad + DMatrix::identity(m, m) * 0.25;
        let solver = SpdFactor::new(&bound, "fixed-point curvature bound")?;
        Ok(FixedPointOperator {
            at_lambda,
            correction,
            solver,
        })
    }

    pub fn correction(&self) -> &DMatrix<f64> {
        &self.correction
    }

    /// Fixed-point residual A^T Lambda (y - A rho) - tanh(rho/2) - C rho.
    pub fn residual(
        &self,
        state: &BssState,
        y: &DVector<f64>,
        rho: &DVector<f64>,
    ) -> DVector<f64> {
        let resid = y - &state.a_bar * rho;
        let mut g = &self.at_lambda * resid - &self.correction * rho;
        for j in 0..rho.len() {
            g[j] -= (0.5 * rho[j]).tanh();
        }
        g
    }

    /// Damped quasi-Newton iteration to the unique root, warm-started at
    /// `rho_init`. Every step solves against the fixed curvature bound, so
    /// the underlying concave objective only increases.
    pub fn solve(
        &self,
        state: &BssState,
        y: &DVector<f64>,
        rho_init: &DVector<f64>,
        config: &BssConfig,
    ) -> Result<DVector<f64>> {
        if !(config.damping > 0.0 && config.damping <= 1.0) {
            return Err(VbError::InvalidParameter(format!(
                "damping must lie in (0, 1], got {}",
                config.damping
            )));
        }
        if rho_init.iter().any(|v| !v.is_finite()) {
            return Err(VbError::InvalidParameter(
                "fixed-point initialization is not finite".into(),
            ));
        }
        let mut rho = rho_init.clone();
        for _ in 0..config.inner_max_iter {
            let g = self.residual(state, y, &rho);
            if g.norm() < config.inner_tol {
                return Ok(rho);
            }
            let step = self.solver.solve(&g);
            rho += step * config.damping;
        }
        let final_residual = self.residual(state, y, &rho).norm();
        if final_residual < config.inner_tol {
            Ok(rho)
        } else {
            Err(VbError::NonConvergence {
                iterations: config.inner_max_iter,
                detail: format!("fixed-point residual {final_residual:.3e}"),
            })
        }
    }
}

/// Solve the per-instance source fixed point
/// `A^T Lambda (y - A rho) - tanh(rho/2) = (sum_i (c_xx_i)^-1 / N) rho`
/// by the damped iteration, starting from `rho_init`.
pub fn source_fixed_point(
    y_n: &DVector<f64>,
    state: &BssState,
    corr: &SourceCorrelations,
    rho_init: &DVector<f64>,
    config: &BssConfig,
) -> Result<DVector<f64>> {
    state.validate()?;
    let op = FixedPointOperator::from_correlations(state, corr)?;
    op.solve(state, y_n, rho_init, config)
}

/// Pseudo-inverse initialization rho = (A^T A)^-1 A^T y, exact in the
/// low-noise large-sample limit.
pub fn pseudo_inverse_init(state: &BssState, y: &DVector<f64>) -> Result<DVector<f64>> {
    let m = state.n_sources();
    let mut ata = state.a_bar.transpose() * &state.a_bar;
    // tiny ridge so rank-deficient mixing matrices still initialize
    let ridge = 1e-12 * (1.0 + ata.trace() / m as f64);
    for j in 0..m {
        ata[(j, j)] += ridge;
    }
    let rhs = state.a_bar.transpose() * y;
    Ok(SpdFactor::new(&ata, "A^T A")?.solve(&rhs))
}

/// Optimize the mixing-element prior precision.
///
/// `Stationary` solves dF/d alpha = 0 exactly (and is the mode under which
/// the free energy stays non-decreasing); `Printed` evaluates the published
/// trace formula, which has units of variance rather than precision. A
/// degenerate denominator is capped at `config.hyper_cap`.
pub fn alpha_update(
    state: &BssState,
    corr: &SourceCorrelations,
    mode: AlphaMode,
    hyper_cap: f64,
) -> Result<f64> {
    let dm = (state.n_sensors() * state.n_sources()) as f64;
    let value = match mode {
        AlphaMode::Printed => {
            let mut trace = state.a_bar.norm_squared();
            for (i, ci) in corr.c_xx_i.iter().enumerate() {
                let inv = SpdFactor::new(ci, "regularized source correlation")?.inverse();
                trace += inv.trace() / (state.lambdas[i] * corr.n as f64);
            }
            trace / dm
        }
        AlphaMode::Stationary => {
            let denom = state.expected_tr_ata();
            if denom <= dm / hyper_cap {
                log::warn!("alpha update diverged; capping at {hyper_cap:.1e}");
                return Ok(hyper_cap);
            }
            dm / denom
        }
    };
    if !value.is_finite() {
        return Err(VbError::Numerical("alpha update is not finite".into()));
    }
    Ok(value.min(hyper_cap))
}

/// Noise-precision update from the stationarity of F in lambda_i:
/// `lambda_i^-1 = E[(y_i - sum_j A_ij x_j)^2]` under q(x) q(A), averaged over
/// instances. Zero residual is capped at `hyper_cap`.
pub fn lambda_update(
    data: &Dataset,
    sp: &SourcePosterior,
    state: &BssState,
    hyper_cap: f64,
) -> Result<DVector<f64>> {
    let n = data.len();
    let d = data.dim();
    if sp.len() != n || state.n_sensors() != d {
        return Err(VbError::DimensionMismatch(
            "data, source posterior and state disagree on shapes".into(),
        ));
    }
    let gamma_inv = SpdFactor::new(&sp.gamma, "source precision")?.inverse();
    let mut residuals = DVector::zeros(d);
    // second moment of x_n under q: rho rho^T + Gamma^-1
    for r in 0..n {
        let rho = sp.rho.row(r).transpose();
        let y = data.row(r);
        for i in 0..d {
            let a_i = state.a_bar.row(i).transpose();
            let mean_resid = y[i] - a_i.dot(&rho);
            let block = &state.sigma_blocks[i];
            let var_a = (block * &rho).dot(&rho) + (block * &gamma_inv).trace();
            let var_x = (&gamma_inv * &a_i).dot(&a_i);
            residuals[i] += mean_resid * mean_resid + var_a + var_x;
        }
    }
    residuals /= n as f64;
    Ok(DVector::from_fn(d, |i, _| {
        if residuals[i] <= 1.0 / hyper_cap {
            log::warn!("noise precision {i} diverged; capping at {hyper_cap:.1e}");
            hyper_cap
        } else {
            (1.0 / residuals[i]).min(hyper_cap)
        }
    }))
}
