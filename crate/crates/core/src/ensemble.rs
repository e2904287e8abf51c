//! Model-ensemble accounting shared by both engines: free-energy reports,
//! the posterior over model structures, the large-sample (BIC/MDL) penalty,
//! and predictive densities via an augmented-dataset refit.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Result, VbError};
use crate::linalg::log_sum_exp;

/// Tolerance scale for the non-decreasing free-energy check: a step may drop
/// by at most `MONOTONICITY_TOL * (1 + |F|)`.
pub const MONOTONICITY_TOL: f64 = 1e-8;

/// Free-energy decomposition F = likelihood_term - kl_term, together with the
/// per-iteration trace of the optimization that produced it.
///
/// `trace` covers the iterations since the last structural change (component
/// pruning restarts it) and is non-decreasing up to `MONOTONICITY_TOL * (1 + |F|)`
/// per step. `history` keeps every evaluation across the whole fit, annotated
/// with the number of alive components, so prune events remain visible.
#[derive(Debug, Clone)]
pub struct FreeEnergyReport {
    /// Expected complete-data log likelihood plus hidden-posterior entropy.
    pub likelihood_term: f64,
    /// Occam factor: KL between the parameter posterior and prior.
    pub kl_term: f64,
    /// likelihood_term - kl_term.
    pub total: f64,
    /// F per iteration since the last structural change.
    pub trace: Vec<f64>,
    /// Every evaluation: (iteration index, F, alive components).
    pub history: Vec<(usize, f64, usize)>,
}

impl FreeEnergyReport {
    pub fn new(likelihood_term: f64, kl_term: f64) -> Result<Self> {
        let total = likelihood_term - kl_term;
        if !total.is_finite() {
            return Err(VbError::Numerical(format!(
                "free energy is not finite (likelihood {likelihood_term}, KL {kl_term})"
            )));
        }
        Ok(FreeEnergyReport {
            likelihood_term,
            kl_term,
            total,
            trace: vec![total],
            history: Vec::new(),
        })
    }

    /// Largest drop between consecutive trace entries beyond tolerance, if any.
    pub fn monotonicity_violation(&self) -> Option<(usize, f64)> {
        for (i, w) in self.trace.windows(2).enumerate() {
            let tol = MONOTONICITY_TOL * (1.0 + w[0].abs());
            if w[1] < w[0] - tol {
                return Some((i + 1, w[0] - w[1]));
            }
        }
        None
    }
}

/// One structure's scores inside a [`StructurePosterior`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureEntry {
    pub free_energy: f64,
    pub log_prior: f64,
    pub log_posterior: f64,
}

/// Normalized posterior over model structures m, q(m) proportional to
/// exp(F_m + log p(m)).
#[derive(Debug, Clone, Default)]
pub struct StructurePosterior {
    pub entries: BTreeMap<usize, StructureEntry>,
}

impl StructurePosterior {
    pub fn posterior_prob(&self, m: usize) -> Option<f64> {
        self.entries.get(&m).map(|e| e.log_posterior.exp())
    }
}

/// Normalize (F_m, log p(m)) pairs into log q(m), shifting by the max for
/// stability. Structures are labeled 1..=K in input order.
pub fn structure_log_posterior(
    free_energies: &[f64],
    log_priors: &[f64],
) -> Result<StructurePosterior> {
    if free_energies.is_empty() {
        return Err(VbError::InvalidParameter(
            "structure posterior needs at least one structure".into(),
        ));
    }
    if free_energies.len() != log_priors.len() {
        return Err(VbError::DimensionMismatch(format!(
            "{} free energies vs {} log priors",
            free_energies.len(),
            log_priors.len()
        )));
    }
    structure_log_posterior_labeled(
        free_energies
            .iter()
            .zip(log_priors)
            .enumerate()
            .map(|(i, (&f, &lp))| (i + 1, f, lp)),
    )
}

/// Same as [`structure_log_posterior`] but with explicit structure labels;
/// used by sweeps that had to exclude failed structures.
pub fn structure_log_posterior_labeled(
    entries: impl IntoIterator<Item = (usize, f64, f64)>,
) -> Result<StructurePosterior> {
    let entries: Vec<(usize, f64, f64)> = entries.into_iter().collect();
    if entries.is_empty() {
        return Err(VbError::InvalidParameter(
            "structure posterior needs at least one structure".into(),
        ));
    }
    for &(m, f, lp) in &entries {
        if !f.is_finite() || !(lp <= 0.0 || lp.is_finite()) {
            return Err(VbError::Numerical(format!(
                "non-finite score for structure {m}"
            )));
        }
    }
    let scores: Vec<f64> = entries.iter().map(|&(_, f, lp)| f + lp).collect();
    let log_z = log_sum_exp(&scores);
    let mut out = StructurePosterior::default();
    for (&(m, f, lp), &score) in entries.iter().zip(&scores) {
        out.entries.insert(
            m,
            StructureEntry {
                free_energy: f,
                log_prior: lp,
                log_posterior: score - log_z,
            },
        );
    }
    Ok(out)
}

/// Large-sample Occam penalty: |Theta|/2 * ln N - log p(Theta).
///
/// Subtracted from the in-model likelihood score, this recovers the BIC/MDL
/// model-selection criteria.
pub fn bic_penalty(n_params: usize, n_data: usize, log_prior_at_ml: f64) -> Result<f64> {
    if n_data == 0 {
        return Err(VbError::InvalidParameter(
            "BIC penalty needs at least one data point".into(),
        ));
    }
    Ok(n_params as f64 / 2.0 * (n_data as f64).ln() - log_prior_at_ml)
}

/// Most probable structure; ties break toward the smaller m.
pub fn map_structure(sp: &StructurePosterior) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&m, entry) in &sp.entries {
        match best {
            Some((_, lp)) if entry.log_posterior <= lp => {}
            _ => best = Some((m, entry.log_posterior)),
        }
    }
    best.map(|(m, _)| m)
        .ok_or_else(|| VbError::InvalidParameter("empty structure posterior".into()))
}

/// Budget for the augmented-dataset refit behind predictive densities.
#[derive(Debug, Clone)]
pub struct RefitConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Use the large-sample shortcut (single posterior-expected log-density
    /// evaluation) instead of the full refit.
    pub fast: bool,
}

impl Default for RefitConfig {
    fn default() -> Self {
        RefitConfig {
            max_iter: 200,
            tol: 1e-8,
            fast: false,
        }
    }
}

/// A converged variational fit that can be cheaply refit on its training set
/// plus one extra point. Clones own their state, so independent predictive
/// queries may run concurrently.
pub trait VariationalRefit: Clone {
    /// Converged free energy F on the training set.
    fn free_energy(&self) -> f64;

    /// Refit on Y union {y}, warm-started from this state; returns F'.
    fn refit_with(&self, y_new: &DVector<f64>, config: &RefitConfig) -> Result<f64>;

    /// Large-sample shortcut: posterior-expected log density of `y_new`.
    fn fast_log_density(&self, y_new: &DVector<f64>) -> Result<f64>;
}

/// Log predictive density log p(y|Y) = F' - F via the augmented-dataset refit
/// (or the large-sample shortcut when `config.fast` is set).
pub fn predictive_log_density<M: VariationalRefit>(
    fitted: &M,
    y_new: &DVector<f64>,
    config: &RefitConfig,
) -> Result<f64> {
    if config.fast {
        return fitted.fast_log_density(y_new);
    }
    let f_augmented = fitted.refit_with(y_new, config)?;
    Ok(f_augmented - fitted.free_energy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equal_scores_split_evenly() {
        let sp = structure_log_posterior(&[0.0, 0.0], &[0.5f64.ln(), 0.5f64.ln()]).unwrap();
        assert_abs_diff_eq!(sp.entries[&1].log_posterior, 0.5f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(sp.entries[&2].log_posterior, 0.5f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn log_three_gap_gives_quarter_three_quarters() {
        let sp = structure_log_posterior(&[0.0, 3f64.ln()], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(sp.posterior_prob(1).unwrap(), 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(sp.posterior_prob(2).unwrap(), 0.75, epsilon = 1e-14);
    }

    #[test]
    fn extreme_gaps_do_not_overflow() {
        let sp = structure_log_posterior(&[-1000.0, 0.0, -1000.0], &[0.0; 3]).unwrap();
        let middle = sp.entries[&2].log_posterior;
        assert!(middle > -1e-99, "middle log-posterior {middle}");
        assert!(sp.entries[&1].log_posterior.is_finite());
        let total: f64 = sp.entries.values().map(|e| e.log_posterior.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let f = [-3.0, 1.0, 0.2];
        let lp = [(1f64 / 3.0).ln(); 3];
        let a = structure_log_posterior(&f, &lp).unwrap();
        let shifted: Vec<f64> = f.iter().map(|v| v + 1234.5).collect();
        let b = structure_log_posterior(&shifted, &lp).unwrap();
        for m in 1..=3 {
            assert_abs_diff_eq!(
                a.entries[&m].log_posterior,
                b.entries[&m].log_posterior,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn posterior_normalizes_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let k = rng.gen_range(1..8);
            let f: Vec<f64> = (0..k).map(|_| rng.gen_range(-2000.0..0.0)).collect();
            let lp = vec![-(k as f64).ln(); k];
            let sp = structure_log_posterior(&f, &lp).unwrap();
            let total: f64 = sp.entries.values().map(|e| e.log_posterior.exp()).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(structure_log_posterior(&[], &[]).is_err());
    }

    #[test]
    fn bic_formula_cases() {
        assert_abs_diff_eq!(
            bic_penalty(4, 100, 0.0).unwrap(),
            2.0 * 100f64.ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(bic_penalty(7, 1, -1.25).unwrap(), 1.25, epsilon = 1e-14);
        assert_abs_diff_eq!(bic_penalty(0, 50, -0.5).unwrap(), 0.5, epsilon = 1e-14);
        assert!(bic_penalty(3, 0, 0.0).is_err());
    }

    #[test]
    fn bic_is_linear_in_params_and_logarithmic_in_n() {
        for k in 0..10usize {
            let v = bic_penalty(k, 64, 0.0).unwrap();
            assert_abs_diff_eq!(v, k as f64 * 0.5 * 64f64.ln(), epsilon = 1e-12);
        }
        for &n in &[10usize, 100, 1000] {
            let v = bic_penalty(2, n, 0.0).unwrap();
            assert_abs_diff_eq!(v, (n as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn map_structure_prefers_larger_probability_then_smaller_m() {
        let sp = structure_log_posterior(&[0.0, 3f64.ln()], &[0.0, 0.0]).unwrap();
        assert_eq!(map_structure(&sp).unwrap(), 2);

        let tie = structure_log_posterior(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(map_structure(&tie).unwrap(), 1);
    }

    #[test]
    fn map_structure_invariant_under_monotone_transforms() {
        // The argmax only depends on the posterior ordering; squaring or
        // shifting all probabilities by a positive monotone map keeps it.
        let sp = structure_log_posterior(&[-4.0, -1.0, -2.5], &[0.0; 3]).unwrap();
        let chosen = map_structure(&sp).unwrap();
        let probs: Vec<(usize, f64)> = sp
            .entries
            .iter()
            .map(|(&m, e)| (m, e.log_posterior.exp()))
            .collect();
        for transform in [|p: f64| p * p, |p: f64| p + 0.1, |p: f64| p.sqrt()] {
            let argmax = probs
                .iter()
                .map(|&(m, p)| (m, transform(p)))
                .fold((0usize, f64::NEG_INFINITY), |acc, (m, v)| {
                    if v > acc.1 {
                        (m, v)
                    } else {
                        acc
                    }
                })
                .0;
            assert_eq!(argmax, chosen);
        }
    }

    #[test]
    fn report_tracks_monotonicity() {
        let mut r = FreeEnergyReport::new(-10.0, 2.0).unwrap();
        assert_abs_diff_eq!(r.total, -12.0, epsilon = 0.0);
        r.trace = vec![-12.0, -11.0, -11.0 - 1e-12];
        assert!(r.monotonicity_violation().is_none());
        r.trace = vec![-12.0, -11.0, -11.5];
        let (idx, drop) = r.monotonicity_violation().unwrap();
        assert_eq!(idx, 2);
        assert!(drop > 0.4);
    }
}
