//! The separation fitting engine: alternating source-posterior / mixing-
//! posterior updates with hyperparameter optimization, free-energy
//! accounting built on the Jensen source bound, and the structure sweep.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::steps::{
    alpha_update, jensen_bound_given_trace, lambda_update, mixing_update, pseudo_inverse_init,
    source_precision_with_correction, update_correlations, AlphaMode, FixedPointOperator,
};
use super::{BssConfig, BssState, SourceCorrelations, SourcePosterior};
use crate::dataset::Dataset;
use crate::ensemble::{
    structure_log_posterior_labeled, FreeEnergyReport, StructurePosterior, MONOTONICITY_TOL,
};
use crate::error::{Result, VbError};
use crate::linalg::SpdFactor;
use crate::special::LN_2PI;

/// Converged separation fit for one source count.
#[derive(Debug, Clone)]
pub struct BssModel {
    pub state: BssState,
    pub sources: SourcePosterior,
    /// Correlations the final state was built from.
    pub correlations: SourceCorrelations,
    pub report: FreeEnergyReport,
    pub config: BssConfig,
    pub data: Dataset,
    pub n_sources: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Structure sweep result over the number of sources.
#[derive(Debug, Clone)]
pub struct BssSweep {
    pub posterior: StructurePosterior,
    pub fits: BTreeMap<usize, BssModel>,
    pub warnings: Vec<(usize, String)>,
}

/// MAP source reconstruction: the posterior mean rho_n per instance. For new
/// data the per-instance fixed point is solved from the pseudo-inverse start.
pub fn reconstruct_sources(model: &BssModel, data: Option<&Dataset>) -> Result<DMatrix<f64>> {
    match data {
        None => Ok(model.sources.rho.clone()),
        Some(new_data) => {
            if new_data.dim() != model.state.n_sensors() {
                return Err(VbError::DimensionMismatch(format!(
                    "data with {} sensors for a model with {}",
                    new_data.dim(),
                    model.state.n_sensors()
                )));
            }
            let op = FixedPointOperator::from_state(&model.state)?;
            let rows: Vec<DVector<f64>> = (0..new_data.len())
                .into_par_iter()
                .map(|r| {
                    let y = new_data.row(r);
                    let init = pseudo_inverse_init(&model.state, &y)?;
                    op.solve(&model.state, &y, &init, &model.config)
                })
                .collect::<Result<_>>()?;
            let m = model.state.n_sources();
            Ok(DMatrix::from_fn(new_data.len(), m, |r, c| rows[r][c]))
        }
    }
}

/// Free-energy pieces of the current (state, source posterior) pair.
///
/// The hidden-variable part sums, per instance, the expected sensor
/// log-likelihood, the Jensen bound on the source log-prior, and the source
/// posterior entropy; the Occam part is the KL of the mixing posterior
/// against its Gaussian prior.
fn free_energy_parts(
    data: &Dataset,
    state: &BssState,
    sp: &SourcePosterior,
) -> Result<(f64, f64)> {
    let n = data.len();
    let d = state.n_sensors();
    let m = state.n_sources();

    let gamma_fact = SpdFactor::new(&sp.gamma, "source precision")?;
    let gamma_inv = gamma_fact.inverse();
    let tr_gamma_inv = gamma_inv.trace();
    let log_det_gamma = gamma_fact.log_det;

    // C = sum_i lambda_i Sigma_i and tr(C Gamma^-1)
    let correction = state.covariance_correction();
    let tr_corr_ginv = (&correction * &gamma_inv).trace();

    // tr(A^T Lambda A Gamma^-1)
    let lam_a = DMatrix::from_fn(d, m, |i, j| state.lambdas[i] * state.a_bar[(i, j)]);
    let at_lam_a = state.a_bar.transpose() * &lam_a;
    let tr_alama_ginv = (&at_lam_a * &gamma_inv).trace();

    let log_lambda_term: f64 = state
        .lambdas
        .iter()
        .map(|&l| 0.5 * (l.ln() - LN_2PI))
        .sum();
    let entropy = 0.5 * m as f64 * (1.0 + LN_2PI) - 0.5 * log_det_gamma;

    let mut likelihood = 0.0;
    for r in 0..n {
        let rho = sp.rho.row(r).transpose();
        let resid = data.row(r) - &state.a_bar * &rho;
        let quad: f64 = (0..d).map(|i| state.lambdas[i] * resid[i] * resid[i]).sum();
        let rho_quad = (&correction * &rho).dot(&rho);
        likelihood += log_lambda_term
            - 0.5 * (quad + rho_quad + tr_corr_ginv + tr_alama_ginv)
            + jensen_bound_given_trace(&rho, tr_gamma_inv)
            + entropy;
    }

    // KL[q(A) || p(A | alpha)]
    let dm = (d * m) as f64;
    let mut log_det_blocks = 0.0;
    for block in &state.sigma_blocks {
        log_det_blocks += SpdFactor::new(block, "posterior covariance block")?.log_det;
    }
    let h_qa = 0.5 * dm * (1.0 + LN_2PI) + 0.5 * log_det_blocks;
    let e_log_prior =
        0.5 * dm * (state.alpha.ln() - LN_2PI) - 0.5 * state.alpha * state.expected_tr_ata();
    let kl = -h_qa - e_log_prior;

    if !likelihood.is_finite() || !kl.is_finite() {
        return Err(VbError::Numerical(
            "separation free energy is not finite".into(),
        ));
    }
    Ok((likelihood, kl))
}

/// Free energy of an explicit (state, source posterior) pair.
pub fn free_energy(
    data: &Dataset,
    state: &BssState,
    sp: &SourcePosterior,
) -> Result<FreeEnergyReport> {
    state.validate()?;
    let (likelihood, kl) = free_energy_parts(data, state, sp)?;
    FreeEnergyReport::new(likelihood, kl)
}

/// Exact coordinate maximization of F along the scale reparametrization
/// A -> A S, x -> S^-1 x (S positive diagonal), applied jointly to the mixing
/// and source posteriors.
///
/// The expected sensor log-likelihood is invariant under the move, so F as a
/// function of one s_j reduces to
///
/// ```text
/// f_j(s) = (d - N) ln s - alpha/2 s^2 T_j - N/4 (Gamma^-1)_jj / s^2
///          - 2 sum_n ln cosh(rho_nj / (2 s))
/// ```
///
/// with T_j the j-th diagonal of E[A^T A]. The likelihood term leaves this
/// direction almost flat at low noise, which is what makes the plain
/// alternation crawl; maximizing it directly removes the slow mode while
/// keeping the trace non-decreasing (s = 1 recovers the untransformed state).
fn scale_rebalance(state: &mut BssState, sp: &mut SourcePosterior, n: usize) -> Result<()> {
    let d = state.n_sensors();
    let m = state.n_sources();
    let gamma_inv = SpdFactor::new(&sp.gamma, "source precision")?.inverse();

    let mut scales = DVector::from_element(m, 1.0);
    let mut any = false;
    for j in 0..m {
        let t_j: f64 = (0..d)
            .map(|i| state.a_bar[(i, j)].powi(2) + state.sigma_blocks[i][(j, j)])
            .sum();
        let g_j = n as f64 * gamma_inv[(j, j)];
        let rho_col: Vec<f64> = (0..n).map(|r| sp.rho[(r, j)]).collect();
        let objective = |s: f64| -> f64 {
            let mut v = (d as f64 - n as f64) * s.ln()
                - 0.5 * state.alpha * s * s * t_j
                - 0.25 * g_j / (s * s);
            for &r in &rho_col {
                v -= 2.0 * super::steps::ln_cosh(0.5 * r / s);
            }
            v
        };
        // golden-section search on ln s in [ln 0.5, ln 2]
        let golden = 0.618_033_988_749_894_9;
        let (mut lo, mut hi) = (0.5f64.ln(), 2.0f64.ln());
        let mut x1 = hi - golden * (hi - lo);
        let mut x2 = lo + golden * (hi - lo);
        let mut f1 = objective(x1.exp());
        let mut f2 = objective(x2.exp());
        for _ in 0..40 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + golden * (hi - lo);
                f2 = objective(x2.exp());
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - golden * (hi - lo);
                f1 = objective(x1.exp());
            }
        }
        let s_best = if f1 > f2 { x1.exp() } else { x2.exp() };
        // apply only a strict improvement over the untransformed state
        if objective(s_best) > objective(1.0) {
            scales[j] = s_best;
            any = true;
        }
    }
    if !any {
        return Ok(());
    }

    for j in 0..m {
        let s = scales[j];
        if s == 1.0 {
            continue;
        }
        for i in 0..d {
            state.a_bar[(i, j)] *= s;
        }
        for r in 0..n {
            sp.rho[(r, j)] /= s;
        }
    }
    for block in &mut state.sigma_blocks {
        for a in 0..m {
            for b in 0..m {
                block[(a, b)] *= scales[a] * scales[b];
            }
        }
    }
    let mut gamma = sp.gamma.clone();
    for a in 0..m {
        for b in 0..m {
            gamma[(a, b)] *= scales[a] * scales[b];
        }
    }
    sp.gamma = gamma;
    Ok(())
}

/// Exact coordinate maximization of F along the rotation reparametrization
/// A -> A R^T, x -> R x for a Givens rotation of one source pair.
///
/// Every F term except the Jensen source-prior bound is invariant under the
/// move (the expected sensor likelihood compensates exactly, entropies and
/// the mixing prior are orthogonally invariant), so the objective per pair
/// (j, k) is the ICA-style contrast
///
/// ```text
/// f(theta) = -2 sum_n [ ln cosh(rho'_nj / 2) + ln cosh(rho'_nk / 2) ]
/// ```
///
/// with (rho'_j, rho'_k) the rotated source means. Like the scale move, this
/// removes a prior-curvature-only slow mode of the plain alternation.
fn rotation_rebalance(state: &mut BssState, sp: &mut SourcePosterior, n: usize) {
    let m = state.n_sources();
    let d = state.n_sensors();
    if m < 2 {
        return;
    }
    let quarter_pi = std::f64::consts::FRAC_PI_4;
    for j in 0..m {
        for k in (j + 1)..m {
            let col_j: Vec<f64> = (0..n).map(|r| sp.rho[(r, j)]).collect();
            let col_k: Vec<f64> = (0..n).map(|r| sp.rho[(r, k)]).collect();
            let objective = |theta: f64| -> f64 {
                let (s, c) = theta.sin_cos();
                let mut v = 0.0;
                for r in 0..n {
                    let a = c * col_j[r] - s * col_k[r];
                    let b = s * col_j[r] + c * col_k[r];
                    v -= 2.0 * (super::steps::ln_cosh(0.5 * a) + super::steps::ln_cosh(0.5 * b));
                }
                v
            };
            // golden-section search over theta in [-pi/4, pi/4]
            let golden = 0.618_033_988_749_894_9;
            let (mut lo, mut hi) = (-quarter_pi, quarter_pi);
            let mut x1 = hi - golden * (hi - lo);
            let mut x2 = lo + golden * (hi - lo);
            let mut f1 = objective(x1);
            let mut f2 = objective(x2);
            for _ in 0..40 {
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + golden * (hi - lo);
                    f2 = objective(x2);
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - golden * (hi - lo);
                    f1 = objective(x1);
                }
            }
            let theta = if f1 > f2 { x1 } else { x2 };
            if objective(theta) <= objective(0.0) {
                continue;
            }
            let (s, c) = theta.sin_cos();
            for r in 0..n {
                let a = c * col_j[r] - s * col_k[r];
                let b = s * col_j[r] + c * col_k[r];
                sp.rho[(r, j)] = a;
                sp.rho[(r, k)] = b;
            }
            // mixing columns compensate: col_j' = c col_j - s col_k, etc.
            for i in 0..d {
                let aj = state.a_bar[(i, j)];
                let ak = state.a_bar[(i, k)];
                state.a_bar[(i, j)] = c * aj - s * ak;
                state.a_bar[(i, k)] = s * aj + c * ak;
            }
            // conjugate the quadratic forms: M -> R M R^T on the (j,k) plane
            let rotate = |mat: &mut DMatrix<f64>| {
                for col in 0..mat.ncols() {
                    let vj = mat[(j, col)];
                    let vk = mat[(k, col)];
                    mat[(j, col)] = c * vj - s * vk;
                    mat[(k, col)] = s * vj + c * vk;
                }
                for row in 0..mat.nrows() {
                    let vj = mat[(row, j)];
                    let vk = mat[(row, k)];
                    mat[(row, j)] = c * vj - s * vk;
                    mat[(row, k)] = s * vj + c * vk;
                }
            };
            for block in &mut state.sigma_blocks {
                rotate(block);
            }
            rotate(&mut sp.gamma);
        }
    }
}

/// Deterministic initialization: mixing matrix from the top-m principal
/// directions of the data scaled by their standard deviations, noise
/// precisions from the per-sensor sample variances (unless configured), and
/// source means from the mixing pseudo-inverse.
fn init_state(data: &Dataset, m: usize, config: &BssConfig) -> Result<BssState> {
    let d = data.dim();
    let n = data.len();

    let lambdas = match &config.lambdas {
        Some(l) => {
            if l.len() != d {
                return Err(VbError::DimensionMismatch(format!(
                    "{} noise precisions for {d} sensors",
                    l.len()
                )));
            }
            if l.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(VbError::InvalidParameter(
                    "noise precisions must be positive and finite".into(),
                ));
            }
            l.clone()
        }
        None => {
            let mean = data.mean();
            DVector::from_fn(d, |i, _| {
                let var = (0..n)
                    .map(|r| (data.values()[(r, i)] - mean[i]).powi(2))
                    .sum::<f64>()
                    / n as f64;
                1.0 / var.max(1e-12)
            })
        }
    };

    let cov = data.covariance();
    let eigen = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
    });

    let mut a_bar = DMatrix::zeros(d, m);
    for j in 0..m {
        let idx = order[j % d];
        let scale = eigen.eigenvalues[idx].max(1e-12).sqrt();
        let col = eigen.eigenvectors.column(idx);
        // fix the sign so the dominant entry is positive
        let lead = col
            .iter()
            .cloned()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            a_bar[(i, j)] = sign * scale * col[i];
        }
    }

    let sigma_blocks: Vec<DMatrix<f64>> = (0..d)
        .map(|i| DMatrix::identity(m, m) / (lambdas[i] * n as f64))
        .collect();

    let state = BssState {
        a_bar,
        sigma_blocks,
        alpha: config.alpha_init,
        lambdas,
    };
    state.validate()?;
    Ok(state)
}

/// Fit an m-source separation model. The E-step solves the per-instance
/// source fixed point and the shared source precision; the M-step rebuilds
/// the mixing posterior from the source correlations and re-optimizes the
/// hyperparameters. Stops when the relative free-energy change drops below
/// `config.tol`.
pub fn fit(data: &Dataset, m: usize, config: &BssConfig) -> Result<BssModel> {
    if m == 0 {
        return Err(VbError::InvalidParameter(
            "need at least one source".into(),
        ));
    }
    if data.dim() == 0 || data.len() < m {
        return Err(VbError::InvalidParameter(format!(
            "need d >= 1 sensors and at least m = {m} instances"
        )));
    }
    if config.max_iter == 0 {
        return Err(VbError::InvalidParameter("max_iter must be at least 1".into()));
    }

    let n = data.len();
    let mut state = init_state(data, m, config)?;

    // initial source posterior from the pseudo-inverse of the mixing matrix
    let mut rho = DMatrix::zeros(n, m);
    for r in 0..n {
        let init = pseudo_inverse_init(&state, &data.row(r))?;
        rho.row_mut(r).copy_from(&init.transpose());
    }
    let gamma = source_precision_with_correction(&state, &state.covariance_correction());
    let mut sp = SourcePosterior { rho, gamma };
    let mut corr = update_correlations(data, &sp, &state)?;

    let mut trace: Vec<f64> = Vec::new();
    let mut history: Vec<(usize, f64, usize)> = Vec::new();
    let mut last_parts = (0.0, 0.0);
    let mut converged = false;
    let mut iterations = 0;
    let enforce_monotone = config.alpha_mode == AlphaMode::Stationary;

    for iter in 0..config.max_iter {
        iterations = iter + 1;

        // M-step: mixing posterior, then hyperparameters
        let (a_bar, blocks) = mixing_update(&corr, &state.lambdas, n)?;
        state.a_bar = a_bar;
        state.sigma_blocks = blocks;
        state.alpha = alpha_update(&state, &corr, config.alpha_mode, config.hyper_cap)?;
        if config.update_lambdas && iter >= config.lambda_burn_in {
            state.lambdas = lambda_update(data, &sp, &state, config.hyper_cap)?;
        }

        // E-step: per-instance fixed points (warm-started) and the shared precision
        let op = FixedPointOperator::from_state(&state)?;
        let rows: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|r| {
                let warm = sp.rho.row(r).transpose();
                op.solve(&state, &data.row(r), &warm, config)
            })
            .collect::<Result<_>>()?;
        for r in 0..n {
            sp.rho.row_mut(r).copy_from(&rows[r].transpose());
        }
        sp.gamma = source_precision_with_correction(&state, op.correction());

        if config.scale_acceleration {
            rotation_rebalance(&mut state, &mut sp, n);
            scale_rebalance(&mut state, &mut sp, n)?;
        }

        corr = update_correlations(data, &sp, &state)?;

        let (likelihood, kl) = free_energy_parts(data, &state, &sp)?;
        let f = likelihood - kl;
        if !f.is_finite() {
            return Err(VbError::Numerical(format!(
                "free energy is not finite at iteration {iter}"
            )));
        }
        last_parts = (likelihood, kl);
        history.push((iter, f, m));

        if let Some(&prev) = trace.last() {
            let tolerance = MONOTONICITY_TOL * (1.0 + prev.abs());
            if enforce_monotone && f < prev - tolerance {
                return Err(VbError::NonMonotonic {
                    iteration: iter,
                    drop: prev - f,
                    tolerance,
                });
            }
            let lambdas_pending = config.update_lambdas && iter < config.lambda_burn_in;
            if !lambdas_pending && (f - prev).abs() <= config.tol * (1.0 + f.abs()) {
                trace.push(f);
                converged = true;
                break;
            }
        }
        trace.push(f);
    }

    if !converged {
        return Err(VbError::NonConvergence {
            iterations,
            detail: format!(
                "relative free-energy change still above {:.1e}",
                config.tol
            ),
        });
    }

    let mut report = FreeEnergyReport::new(last_parts.0, last_parts.1)?;
    report.trace = trace;
    report.history = history;
    Ok(BssModel {
        state,
        sources: sp,
        correlations: corr,
        report,
        config: config.clone(),
        data: data.clone(),
        n_sources: m,
        converged,
        iterations,
    })
}

/// Fit every source count m = 1..=k_max independently and score the
/// structures with the flat prior p(m) = 1/K.
pub fn fit_all(data: &Dataset, k_max: usize, config: &BssConfig) -> Result<BssSweep> {
    if k_max == 0 {
        return Err(VbError::InvalidParameter(
            "need at least one structure".into(),
        ));
    }
    let results: Vec<(usize, Result<BssModel>)> = (1..=k_max)
        .into_par_iter()
        .map(|m| (m, fit(data, m, config)))
        .collect();

    let log_prior = -(k_max as f64).ln();
    let mut fits = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut entries = Vec::new();
    for (m, result) in results {
        match result {
            Ok(model) => {
                entries.push((m, model.report.total, log_prior));
                fits.insert(m, model);
            }
            Err(err) => {
                log::warn!("source count m={m} failed: {err}");
                warnings.push((m, err.to_string()));
            }
        }
    }
    if fits.is_empty() {
        return Err(VbError::NonConvergence {
            iterations: 0,
            detail: "every structure in the sweep failed".into(),
        });
    }
    let posterior = structure_log_posterior_labeled(entries)?;
    Ok(BssSweep {
        posterior,
        fits,
        warnings,
    })
}
