//! The mixture fitting engine: block coordinate ascent on the free energy
//! with the proper conjugate priors, component pruning, the per-structure
//! sweep, and predictive refits.
//!
//! Every substep (label posterior, weight posterior, mean posterior,
//! precision posterior) is the exact maximizer of the same free-energy
//! functional given the others, so the F trace is non-decreasing within each
//! structure-stable segment by construction. In the improper-prior limit the
//! updates reduce to the published closed-form rules in [`super::steps`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::init::kmeans_plus_plus_seeds;
use super::{
    GmmComponent, GmmConfig, GmmInit, GmmPosterior, GmmPriors, GmmSuffStats, GmmVarState,
    MeanPrecisionCoupling, Responsibilities,
};
use crate::dataset::Dataset;
use crate::distributions::{DirichletParams, KlDivergence, NormalParams, WishartParams};
use crate::ensemble::{
    structure_log_posterior_labeled, FreeEnergyReport, RefitConfig, StructurePosterior,
    VariationalRefit, MONOTONICITY_TOL,
};
use crate::error::{Result, VbError};
use crate::linalg::{log_sum_exp, symmetrize, SpdFactor};
use crate::special::{digamma, ln_multigamma, multidigamma, LN_2PI};

/// Converged per-structure fit.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub state: GmmVarState,
    pub stats: GmmSuffStats,
    pub posterior: GmmPosterior,
    pub resp: Responsibilities,
    pub report: FreeEnergyReport,
    pub priors: GmmPriors,
    pub config: GmmConfig,
    pub data: Dataset,
    pub initial_components: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl GmmModel {
    pub fn alive_count(&self) -> usize {
        self.stats.alive_count()
    }

    /// Most likely component for a new point (lower index wins ties).
    pub fn classify(&self, y_new: &DVector<f64>) -> Result<usize> {
        super::steps::classify_stats(&self.stats, self.data.len(), y_new)
    }
}

/// Structure sweep result: posterior over the number of components plus the
/// per-structure fits that produced it.
#[derive(Debug, Clone)]
pub struct GmmSweep {
    pub posterior: StructurePosterior,
    pub fits: BTreeMap<usize, GmmModel>,
    /// Structures whose fit failed, with the failure message.
    pub warnings: Vec<(usize, String)>,
}

/// Per-component derived quantities of the current state.
struct Cache {
    e_gamma: DMatrix<f64>,
    e_logdet: f64,
    log_det_p: f64,
    log_det_b: f64,
    tr_egamma_pinv: f64,
}

fn build_cache(comp: &GmmComponent, d: usize) -> Result<Cache> {
    let half_dof = comp.shape + (d as f64 - 1.0) / 2.0;
    let b_fact = SpdFactor::new(&comp.rate, "component rate")?;
    let e_gamma = b_fact.inverse() * half_dof;
    let e_logdet = multidigamma(d, half_dof)? - b_fact.log_det;
    let p_fact = SpdFactor::new(&comp.mean_precision, "mean precision")?;
    let tr_egamma_pinv = (&e_gamma * p_fact.inverse()).trace();
    Ok(Cache {
        e_gamma,
        e_logdet,
        log_det_p: p_fact.log_det,
        log_det_b: b_fact.log_det,
        tr_egamma_pinv,
    })
}

fn build_caches(state: &GmmVarState) -> Result<Vec<Option<Cache>>> {
    let d = state.dim();
    state
        .components
        .iter()
        .map(|c| {
            if c.alive {
                build_cache(c, d).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Log E-step weights for every instance under the current state:
/// E[ln pi_s] + E[ln|G_s|]/2 - d ln(2 pi)/2
///   - [ (y - m_s)^T E[G_s] (y - m_s) + tr(E[G_s] P_s^-1) ] / 2.
fn compute_log_weights(
    data: &Dataset,
    state: &GmmVarState,
    caches: &[Option<Cache>],
) -> Result<DMatrix<f64>> {
    let d = state.dim() as f64;
    let lambda_total: f64 = state
        .components
        .iter()
        .zip(state.lambda.iter())
        .filter(|(c, _)| c.alive)
        .map(|(_, &l)| l)
        .sum();
    let psi_total = digamma(lambda_total)?;

    let m = state.n_components();
    let mut constants = vec![f64::NEG_INFINITY; m];
    for s in 0..m {
        if let Some(cache) = &caches[s] {
            let e_log_pi = digamma(state.lambda[s])? - psi_total;
            constants[s] = e_log_pi + 0.5 * cache.e_logdet
                - 0.5 * d * LN_2PI
                - 0.5 * cache.tr_egamma_pinv;
        }
    }

    let n = data.len();
    let mut logw = DMatrix::from_element(n, m, f64::NEG_INFINITY);
    for r in 0..n {
        let y = data.row(r);
        for s in 0..m {
            if let Some(cache) = &caches[s] {
                let diff = &y - &state.components[s].mean;
                logw[(r, s)] = constants[s] - 0.5 * (&cache.e_gamma * &diff).dot(&diff);
            }
        }
    }
    Ok(logw)
}

fn normalize_rows(
    logw: &DMatrix<f64>,
    alive: &[bool],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, m) = logw.shape();
    let mut matrix = DMatrix::zeros(n, m);
    let mut log_norms = DVector::zeros(n);
    let mut row = vec![f64::NEG_INFINITY; m];
    for r in 0..n {
        for s in 0..m {
            row[s] = if alive[s] { logw[(r, s)] } else { f64::NEG_INFINITY };
        }
        let z = log_sum_exp(&row);
        if !z.is_finite() {
            return Err(VbError::Numerical(format!(
                "label posterior normalizer is not finite at instance {r}"
            )));
        }
        for s in 0..m {
            matrix[(r, s)] = if alive[s] { (row[s] - z).exp() } else { 0.0 };
        }
        log_norms[r] = z;
    }
    Ok((matrix, log_norms))
}

/// One exact M-step: weight, mean, and precision posteriors in turn, with a
/// final mean-precision refresh against the new precision posterior.
fn m_step_exact(
    data: &Dataset,
    resp: &DMatrix<f64>,
    counts: &DVector<f64>,
    state: &mut GmmVarState,
    caches: &[Option<Cache>],
    priors: &GmmPriors,
) -> Result<()> {
    let d = data.dim();
    let n = data.len();
    let p0 = priors.prior_mean_precision()? * priors.beta0;

    for s in 0..state.n_components() {
        if !state.components[s].alive {
            continue;
        }
        let cache = caches[s].as_ref().expect("alive component has a cache");
        let n_s = counts[s];
        state.lambda[s] = priors.lambda0 + n_s;

        // weighted mean of the assigned data
        let mut ybar = DVector::zeros(d);
        for r in 0..n {
            ybar += data.row(r) * resp[(r, s)];
        }
        ybar /= n_s;

        // mean posterior given the current precision posterior
        let (mean, mean_precision) = match priors.coupling {
            MeanPrecisionCoupling::NormalWishart => {
                let mean = (&priors.xi0 * priors.beta0 + &ybar * n_s) / (priors.beta0 + n_s);
                (mean, &cache.e_gamma * (priors.beta0 + n_s))
            }
            MeanPrecisionCoupling::Factorized => {
                let precision = &p0 + &cache.e_gamma * n_s;
                let rhs = &p0 * &priors.xi0 + &cache.e_gamma * &ybar * n_s;
                let mean = SpdFactor::new(&precision, "mean precision")?.solve(&rhs);
                (mean, precision)
            }
        };

        // scatter about the new mean: sum_r r (y - ybar)(y - ybar)^T shifted
        let mut scatter = DMatrix::zeros(d, d);
        for r in 0..n {
            let c = data.row(r) - &ybar;
            scatter.ger(resp[(r, s)], &c, &c, 1.0);
        }
        let shift = &ybar - &mean;
        scatter.ger(n_s, &shift, &shift, 1.0);
        symmetrize(&mut scatter);

        // precision posterior given the new mean posterior
        let (shape, mut rate) = match priors.coupling {
            MeanPrecisionCoupling::NormalWishart => {
                let shape = priors.a0 + 0.5 + n_s / 2.0;
                let prior_diff = &mean - &priors.xi0;
                // (beta0 + n_s) P^-1 with P = (beta0 + n_s) E[G]_old is E[G]_old^-1
                let e_gamma_inv = &comp_rate_over_halfdof(&state.components[s], d);
                let mut rate = &priors.b0 + (&scatter) * 0.5 + e_gamma_inv * 0.5;
                rate.ger(0.5 * priors.beta0, &prior_diff, &prior_diff, 1.0);
                (shape, rate)
            }
            MeanPrecisionCoupling::Factorized => {
                let shape = priors.a0 + n_s / 2.0;
                let p_inv = SpdFactor::new(&mean_precision, "mean precision")?.inverse();
                let rate = &priors.b0 + (&scatter) * 0.5 + p_inv * (0.5 * n_s);
                (shape, rate)
            }
        };
        symmetrize(&mut rate);

        // refresh the mean posterior against the new precision posterior
        let half_dof = shape + (d as f64 - 1.0) / 2.0;
        let e_gamma_new = SpdFactor::new(&rate, "component rate")?.inverse() * half_dof;
        let (mean, mean_precision) = match priors.coupling {
            MeanPrecisionCoupling::NormalWishart => {
                (mean, &e_gamma_new * (priors.beta0 + n_s))
            }
            MeanPrecisionCoupling::Factorized => {
                let precision = &p0 + &e_gamma_new * n_s;
                let rhs = &p0 * &priors.xi0 + &e_gamma_new * &ybar * n_s;
                let mean = SpdFactor::new(&precision, "mean precision")?.solve(&rhs);
                (mean, precision)
            }
        };

        let comp = &mut state.components[s];
        comp.mean = mean;
        comp.mean_precision = mean_precision;
        comp.shape = shape;
        comp.rate = rate;
    }
    Ok(())
}

/// E[G]^-1 = B / half_dof for the stored component.
fn comp_rate_over_halfdof(comp: &GmmComponent, d: usize) -> DMatrix<f64> {
    let half_dof = comp.shape + (d as f64 - 1.0) / 2.0;
    &comp.rate / half_dof
}

/// KL of one component's factorized posterior against the prior.
fn component_kl(
    comp: &GmmComponent,
    cache: &Cache,
    priors: &GmmPriors,
) -> Result<f64> {
    let d = comp.mean.len() as f64;
    match priors.coupling {
        MeanPrecisionCoupling::Factorized => {
            let p0 = priors.prior_mean_precision()? * priors.beta0;
            let q_mu = NormalParams::new(comp.mean.clone(), comp.mean_precision.clone())?;
            let p_mu = NormalParams::new(priors.xi0.clone(), p0)?;
            let q_g = WishartParams::new(comp.shape, comp.rate.clone())?;
            let p_g = WishartParams::new(priors.a0, priors.b0.clone())?;
            Ok(q_mu.kl_divergence(&p_mu)? + q_g.kl_divergence(&p_g)?)
        }
        MeanPrecisionCoupling::NormalWishart => {
            let half_dof = comp.shape + (d - 1.0) / 2.0;
            let half_dof0 = priors.half_dof0();
            let dm = comp.mean.len();

            let e_log_q_mu = -0.5 * d * (1.0 + LN_2PI) + 0.5 * cache.log_det_p;
            let log_norm_q = half_dof * cache.log_det_b - ln_multigamma(dm, half_dof)?;
            let e_log_q_g =
                log_norm_q + (comp.shape - 1.0) * cache.e_logdet - d * half_dof;

            let diff = &comp.mean - &priors.xi0;
            let quad = (&cache.e_gamma * &diff).dot(&diff);
            let e_log_p_mu = 0.5 * (d * priors.beta0.ln() + cache.e_logdet)
                - 0.5 * d * LN_2PI
                - 0.5 * priors.beta0 * (quad + cache.tr_egamma_pinv);

            let log_det_b0 = SpdFactor::new(&priors.b0, "prior rate")?.log_det;
            let log_norm_p = half_dof0 * log_det_b0 - ln_multigamma(dm, half_dof0)?;
            let e_log_p_g = log_norm_p + (priors.a0 - 1.0) * cache.e_logdet
                - (&priors.b0 * &cache.e_gamma).trace();

            Ok(e_log_q_mu + e_log_q_g - e_log_p_mu - e_log_p_g)
        }
    }
}

fn free_energy_parts(
    state: &GmmVarState,
    caches: &[Option<Cache>],
    priors: &GmmPriors,
    resp: &DMatrix<f64>,
    logw: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    // E[complete-data log likelihood] + H[q(labels)]
    let mut likelihood = 0.0;
    for r in 0..resp.nrows() {
        for s in 0..resp.ncols() {
            let p = resp[(r, s)];
            if p > 0.0 {
                likelihood += p * (logw[(r, s)] - p.ln());
            }
        }
    }

    // Occam factor: weight posterior plus per-component posteriors.
    let alive: Vec<usize> = (0..state.n_components())
        .filter(|&s| state.components[s].alive)
        .collect();
    let q_pi = DirichletParams::new(DVector::from_iterator(
        alive.len(),
        alive.iter().map(|&s| state.lambda[s]),
    ))?;
    let p_pi = DirichletParams::symmetric(alive.len(), priors.lambda0)?;
    let mut kl = q_pi.kl_divergence(&p_pi)?;
    for &s in &alive {
        let cache = caches[s].as_ref().expect("alive component has a cache");
        kl += component_kl(&state.components[s], cache, priors)?;
    }

    if !likelihood.is_finite() {
        return Err(VbError::Numerical(
            "likelihood term is not finite".into(),
        ));
    }
    if !kl.is_finite() {
        return Err(VbError::Numerical("KL term is not finite".into()));
    }
    Ok((likelihood, kl))
}

/// Free energy of an explicit variational state against the priors.
///
/// The report's trace carries this single evaluation. At a zero-information
/// state equal to the prior (factorized coupling) the KL term vanishes.
pub fn free_energy_state(
    data: &Dataset,
    state: &GmmVarState,
    resp: &Responsibilities,
    priors: &GmmPriors,
) -> Result<FreeEnergyReport> {
    priors.validate()?;
    let caches = build_caches(state)?;
    let logw = compute_log_weights(data, state, &caches)?;
    let (likelihood, kl) = free_energy_parts(state, &caches, priors, resp.matrix(), &logw)?;
    FreeEnergyReport::new(likelihood, kl)
}

/// Free energy of the posterior described by sufficient statistics, i.e. the
/// state with weights Dirichlet(N pi_s + 1), mean posteriors
/// Normal(mu_s, N pi_s Gamma_s) and precision posteriors
/// Wishart(N pi_s / 2, (N pi_s / 2) Gamma_s^-1).
pub fn free_energy(
    data: &Dataset,
    stats: &GmmSuffStats,
    resp: &Responsibilities,
    priors: &GmmPriors,
) -> Result<FreeEnergyReport> {
    let state = state_from_stats(stats, data.len())?;
    free_energy_state(data, &state, resp, priors)
}

fn state_from_stats(stats: &GmmSuffStats, n_total: usize) -> Result<GmmVarState> {
    stats.validate()?;
    let n = n_total as f64;
    let m = stats.n_components();
    let mut lambda = DVector::zeros(m);
    let mut components = Vec::with_capacity(m);
    for s in 0..m {
        if !stats.alive[s] {
            lambda[s] = 1.0;
            components.push(GmmComponent {
                mean: stats.mu_bar[s].clone(),
                mean_precision: DMatrix::identity(stats.dim(), stats.dim()),
                shape: 1.0,
                rate: DMatrix::identity(stats.dim(), stats.dim()),
                alive: false,
            });
            continue;
        }
        let n_pi = n * stats.pi_bar[s];
        lambda[s] = n_pi + 1.0;
        let a = n_pi / 2.0;
        if !(a > 0.0) {
            return Err(VbError::InvalidParameter(format!(
                "component {s} has vanishing weight; cannot form its posterior"
            )));
        }
        let rate = SpdFactor::new(&stats.gamma_bar[s], "gamma_bar")?.inverse() * a;
        components.push(GmmComponent {
            mean: stats.mu_bar[s].clone(),
            mean_precision: &stats.gamma_bar[s] * n_pi,
            shape: a,
            rate,
            alive: true,
        });
    }
    Ok(GmmVarState { lambda, components })
}

struct Optimized {
    resp: Responsibilities,
    report: FreeEnergyReport,
    converged: bool,
    iterations: usize,
}

fn optimize(
    data: &Dataset,
    state: &mut GmmVarState,
    priors: &GmmPriors,
    max_iter: usize,
    tol: f64,
) -> Result<Optimized> {
    let mut caches = build_caches(state)?;
    let mut logw = compute_log_weights(data, state, &caches)?;
    let mut alive: Vec<bool> = state.components.iter().map(|c| c.alive).collect();

    let mut history: Vec<(usize, f64, usize)> = Vec::new();
    let mut segment: Vec<f64> = Vec::new();
    let mut last_parts = (0.0, 0.0);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        // E-step
        let (mut resp, _) = normalize_rows(&logw, &alive)?;
        let mut counts = DVector::from_fn(resp.ncols(), |s, _| resp.column(s).sum());

        // Prune components whose weight fell to <= one instance; mass is
        // renormalized onto the survivors, which may push further components
        // below the threshold on the next pass.
        let mut pruned = false;
        loop {
            let mut any = false;
            for s in 0..state.n_components() {
                if alive[s] && counts[s] <= 1.0 {
                    state.components[s].alive = false;
                    alive[s] = false;
                    any = true;
                }
            }
            if !any {
                break;
            }
            pruned = true;
            if state.alive_count() == 0 {
                return Err(VbError::ModelCollapse);
            }
            let renorm = normalize_rows(&logw, &alive)?;
            resp = renorm.0;
            counts = DVector::from_fn(resp.ncols(), |s, _| resp.column(s).sum());
        }

        // M-step
        m_step_exact(data, &resp, &counts, state, &caches, priors)?;
        caches = build_caches(state)?;

        // free energy of (labels, new parameter posterior)
        logw = compute_log_weights(data, state, &caches)?;
        let (likelihood, kl) = free_energy_parts(state, &caches, priors, &resp, &logw)?;
        let f = likelihood - kl;
        if !f.is_finite() {
            return Err(VbError::Numerical(format!(
                "free energy is not finite at iteration {iter}"
            )));
        }
        last_parts = (likelihood, kl);
        history.push((iter, f, state.alive_count()));

        if pruned {
            // structural change: the monotonicity baseline restarts
            segment.clear();
        }
        if let Some(&prev) = segment.last() {
            let tolerance = MONOTONICITY_TOL * (1.0 + prev.abs());
            if f < prev - tolerance {
                return Err(VbError::NonMonotonic {
                    iteration: iter,
                    drop: prev - f,
                    tolerance,
                });
            }
            if (f - prev).abs() <= tol * (1.0 + f.abs()) {
                segment.push(f);
                converged = true;
                break;
            }
        }
        segment.push(f);
    }

    // responsibilities consistent with the final state
    let (matrix, log_norms) = normalize_rows(&logw, &alive)?;
    let resp = Responsibilities::new(matrix, log_norms)?;

    let mut report = FreeEnergyReport::new(last_parts.0, last_parts.1)?;
    report.trace = segment;
    report.history = history;
    Ok(Optimized {
        resp,
        report,
        converged,
        iterations,
    })
}

fn init_state(
    data: &Dataset,
    m: usize,
    config: &GmmConfig,
    priors: &GmmPriors,
) -> Result<GmmVarState> {
    let d = data.dim();
    let n = data.len() as f64;
    let (weights, means, precisions): (Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>) =
        match &config.init {
            GmmInit::KmeansPlusPlus => {
                let seeds = kmeans_plus_plus_seeds(data, m, config.seed)?;
                let global_precision =
                    SpdFactor::new(&data.covariance(), "data covariance")?.inverse();
                (
                    vec![1.0 / m as f64; m],
                    seeds,
                    vec![global_precision; m],
                )
            }
            GmmInit::Explicit {
                weights,
                means,
                precisions,
            } => {
                if weights.len() != m || means.len() != m || precisions.len() != m {
                    return Err(VbError::DimensionMismatch(format!(
                        "explicit init must provide {m} components"
                    )));
                }
                (weights.clone(), means.clone(), precisions.clone())
            }
        };

    let coupling_half = match priors.coupling {
        MeanPrecisionCoupling::NormalWishart => 0.5,
        MeanPrecisionCoupling::Factorized => 0.0,
    };
    let p0 = priors.prior_mean_precision()? * priors.beta0;

    let mut lambda = DVector::zeros(m);
    let mut components = Vec::with_capacity(m);
    for s in 0..m {
        let n_s = n * weights[s];
        if !(n_s > 0.0) {
            return Err(VbError::InvalidParameter(format!(
                "initial weight of component {s} must be positive"
            )));
        }
        lambda[s] = priors.lambda0 + n_s;
        let shape = priors.a0 + coupling_half + n_s / 2.0;
        let half_dof = shape + (d as f64 - 1.0) / 2.0;
        // rate chosen so that E[G] equals the requested initial precision
        let rate = SpdFactor::new(&precisions[s], "initial precision")?.inverse() * half_dof;
        let mean_precision = match priors.coupling {
            MeanPrecisionCoupling::NormalWishart => &precisions[s] * (priors.beta0 + n_s),
            MeanPrecisionCoupling::Factorized => &p0 + &precisions[s] * n_s,
        };
        components.push(GmmComponent {
            mean: means[s].clone(),
            mean_precision,
            shape,
            rate,
            alive: true,
        });
    }
    Ok(GmmVarState { lambda, components })
}

/// Fit an m-component mixture: alternating label/parameter posterior updates
/// with pruning, until the relative free-energy change drops below
/// `config.tol` or `config.max_iter` is reached.
pub fn fit(data: &Dataset, m: usize, config: &GmmConfig) -> Result<GmmModel> {
    if m == 0 {
        return Err(VbError::InvalidParameter(
            "need at least one component".into(),
        ));
    }
    if data.len() < 2 {
        return Err(VbError::InvalidParameter(
            "need at least two data points".into(),
        ));
    }
    if config.max_iter == 0 {
        return Err(VbError::InvalidParameter(
            "max_iter must be at least 1".into(),
        ));
    }
    let priors = match &config.priors {
        Some(p) => {
            p.validate()?;
            if p.dim() != data.dim() {
                return Err(VbError::DimensionMismatch(format!(
                    "priors of dimension {} for data of dimension {}",
                    p.dim(),
                    data.dim()
                )));
            }
            p.clone()
        }
        None => GmmPriors::from_data(data, config.prior_eps)?,
    };

    let mut state = init_state(data, m, config, &priors)?;
    let outcome = optimize(data, &mut state, &priors, config.max_iter, config.tol)?;

    let counts = outcome.resp.counts();
    let stats = state.to_stats(&counts)?;
    let posterior = GmmPosterior::from_stats(&stats, data.len())?;
    Ok(GmmModel {
        state,
        stats,
        posterior,
        resp: outcome.resp,
        report: outcome.report,
        priors,
        config: config.clone(),
        data: data.clone(),
        initial_components: m,
        converged: outcome.converged,
        iterations: outcome.iterations,
    })
}

/// Fit every structure m = 1..=k_max independently (in parallel) and score
/// them with the flat structure prior p(m) = 1/K.
pub fn fit_all(data: &Dataset, k_max: usize, config: &GmmConfig) -> Result<GmmSweep> {
    if k_max == 0 {
        return Err(VbError::InvalidParameter(
            "need at least one structure".into(),
        ));
    }
    let results: Vec<(usize, Result<GmmModel>)> = (1..=k_max)
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
                log::warn!("structure m={m} failed: {err}");
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
    Ok(GmmSweep {
        posterior,
        fits,
        warnings,
    })
}

/// Rebuild a fitted model from its persisted parts: the variational state,
/// priors, configuration, training data, and the stored free-energy split.
/// Responsibilities, sufficient statistics and the distribution-form
/// posterior are recomputed from the state deterministically.
pub fn rehydrate(
    state: GmmVarState,
    priors: GmmPriors,
    config: GmmConfig,
    data: Dataset,
    likelihood_term: f64,
    kl_term: f64,
    initial_components: usize,
    converged: bool,
    iterations: usize,
) -> Result<GmmModel> {
    priors.validate()?;
    if state.dim() != data.dim() {
        return Err(VbError::DimensionMismatch(format!(
            "state of dimension {} with data of dimension {}",
            state.dim(),
            data.dim()
        )));
    }
    let caches = build_caches(&state)?;
    let logw = compute_log_weights(&data, &state, &caches)?;
    let alive: Vec<bool> = state.components.iter().map(|c| c.alive).collect();
    let (matrix, log_norms) = normalize_rows(&logw, &alive)?;
    let resp = Responsibilities::new(matrix, log_norms)?;
    let counts = resp.counts();
    let stats = state.to_stats(&counts)?;
    let posterior = GmmPosterior::from_stats(&stats, data.len())?;
    let report = FreeEnergyReport::new(likelihood_term, kl_term)?;
    Ok(GmmModel {
        state,
        stats,
        posterior,
        resp,
        report,
        priors,
        config,
        data,
        initial_components,
        converged,
        iterations,
    })
}

impl VariationalRefit for GmmModel {
    fn free_energy(&self) -> f64 {
        self.report.total
    }

    fn refit_with(&self, y_new: &DVector<f64>, config: &RefitConfig) -> Result<f64> {
        let augmented = self.data.with_appended(y_new)?;
        let mut state = self.state.clone();
        let outcome = optimize(
            &augmented,
            &mut state,
            &self.priors,
            config.max_iter,
            config.tol,
        )?;
        Ok(outcome.report.total)
    }

    fn fast_log_density(&self, y_new: &DVector<f64>) -> Result<f64> {
        let caches = build_caches(&self.state)?;
        let single = Dataset::new(
            DMatrix::from_fn(1, y_new.len(), |_, c| y_new[c]),
            self.data.columns().to_vec(),
        )?;
        let logw = compute_log_weights(&single, &self.state, &caches)?;
        let row: Vec<f64> = (0..logw.ncols()).map(|s| logw[(0, s)]).collect();
        Ok(log_sum_exp(&row))
    }
}
