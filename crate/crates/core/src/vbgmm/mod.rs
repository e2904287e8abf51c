//! Variational Bayes Gaussian mixture engine: digamma-corrected E-step,
//! sufficient-statistics M-step, automatic component pruning, per-structure
//! fitting and the structure sweep over the number of components.

mod engine;
mod init;
mod steps;

pub use engine::{fit, fit_all, free_energy, free_energy_state, rehydrate, GmmModel, GmmSweep};
pub use init::kmeans_plus_plus_seeds;
pub use steps::{classify_stats, e_step, m_step, prune};

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::distributions::{DirichletParams, NormalParams, WishartParams};
use crate::error::{Result, VbError};
use crate::linalg::{is_spd, SpdFactor};

/// Per-component sufficient statistics of the mixture posterior: mixture
/// weights `pi_bar`, posterior mean locations `mu_bar`, and posterior mean
/// precisions `gamma_bar`, plus alive flags for pruned components.
#[derive(Debug, Clone)]
pub struct GmmSuffStats {
    pub pi_bar: DVector<f64>,
    pub mu_bar: Vec<DVector<f64>>,
    pub gamma_bar: Vec<DMatrix<f64>>,
    pub alive: Vec<bool>,
}

impl GmmSuffStats {
    pub fn new(
        pi_bar: DVector<f64>,
        mu_bar: Vec<DVector<f64>>,
        gamma_bar: Vec<DMatrix<f64>>,
        alive: Vec<bool>,
    ) -> Result<Self> {
        let m = pi_bar.len();
        if mu_bar.len() != m || gamma_bar.len() != m || alive.len() != m {
            return Err(VbError::DimensionMismatch(
                "sufficient statistics arrays differ in length".into(),
            ));
        }
        let stats = GmmSuffStats {
            pi_bar,
            mu_bar,
            gamma_bar,
            alive,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self
            .pi_bar
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(&p, _)| p)
            .sum();
        if self.alive.iter().any(|&a| a) && (total - 1.0).abs() > 1e-10 {
            return Err(VbError::InvalidParameter(format!(
                "alive mixture weights sum to {total}, expected 1"
            )));
        }
        for (s, alive) in self.alive.iter().enumerate() {
            if *alive {
                if !(self.pi_bar[s] > 0.0) {
                    return Err(VbError::InvalidParameter(format!(
                        "alive component {s} has weight {}",
                        self.pi_bar[s]
                    )));
                }
                if !is_spd(&self.gamma_bar[s]) {
                    return Err(VbError::InvalidParameter(format!(
                        "alive component {s} precision is not SPD"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.pi_bar.len()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn dim(&self) -> usize {
        self.mu_bar.first().map(|m| m.len()).unwrap_or(0)
    }

    /// Exact finite-sample posterior mean weights (N pi_s + 1) / (N + m alive);
    /// `pi_bar` itself equals the posterior mean only in the large-sample limit.
    pub fn dirichlet_mean_weights(&self, n_total: usize) -> DVector<f64> {
        let alive_m = self.alive_count() as f64;
        let n = n_total as f64;
        DVector::from_fn(self.n_components(), |s, _| {
            if self.alive[s] {
                (n * self.pi_bar[s] + 1.0) / (n + alive_m)
            } else {
                0.0
            }
        })
    }
}

/// The mixture parameter posterior in distribution form, mapped from the
/// sufficient statistics: mean posterior Normal(mu_bar_s, N pi_s Gamma_s),
/// precision posterior Wishart(a_s = N pi_s / 2, B_s = a_s Gamma_s^-1), and
/// weights Dirichlet(N pi_s + 1) over the alive components.
#[derive(Debug, Clone)]
pub struct GmmPosterior {
    /// Dirichlet over alive components, in ascending component order.
    pub weights: DirichletParams,
    /// Indices of the alive components the Dirichlet covers.
    pub alive_indices: Vec<usize>,
    pub means: Vec<Option<NormalParams>>,
    pub precisions: Vec<Option<WishartParams>>,
}

impl GmmPosterior {
    pub fn from_stats(stats: &GmmSuffStats, n_total: usize) -> Result<GmmPosterior> {
        let n = n_total as f64;
        let mut alive_indices = Vec::new();
        let mut lambdas = Vec::new();
        let mut means = Vec::with_capacity(stats.n_components());
        let mut precisions = Vec::with_capacity(stats.n_components());
        for s in 0..stats.n_components() {
            if !stats.alive[s] {
                means.push(None);
                precisions.push(None);
                continue;
            }
            alive_indices.push(s);
            lambdas.push(n * stats.pi_bar[s] + 1.0);
            let mean_precision = &stats.gamma_bar[s] * (n * stats.pi_bar[s]);
            means.push(Some(NormalParams::new(
                stats.mu_bar[s].clone(),
                mean_precision,
            )?));
            let a = n * stats.pi_bar[s] / 2.0;
            let rate = SpdFactor::new(&stats.gamma_bar[s], "gamma_bar")?.inverse() * a;
            precisions.push(Some(WishartParams::new(a, rate)?));
        }
        if alive_indices.is_empty() {
            return Err(VbError::ModelCollapse);
        }
        Ok(GmmPosterior {
            weights: DirichletParams::new(DVector::from_vec(lambdas))?,
            alive_indices,
            means,
            precisions,
        })
    }
}

/// Row-stochastic responsibilities q(s_n | m) with per-row log normalizers.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    matrix: DMatrix<f64>,
    log_norms: DVector<f64>,
}

impl Responsibilities {
    pub fn new(matrix: DMatrix<f64>, log_norms: DVector<f64>) -> Result<Self> {
        if log_norms.len() != matrix.nrows() {
            return Err(VbError::DimensionMismatch(
                "one log normalizer per responsibility row required".into(),
            ));
        }
        for r in 0..matrix.nrows() {
            let row_sum: f64 = matrix.row(r).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(VbError::InvalidParameter(format!(
                    "responsibility row {r} sums to {row_sum}"
                )));
            }
            if matrix.row(r).iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(VbError::InvalidParameter(format!(
                    "responsibility row {r} has entries outside [0, 1]"
                )));
            }
        }
        Ok(Responsibilities { matrix, log_norms })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// log z_n, the per-instance normalizer of the E-step weights.
    pub fn log_norms(&self) -> &DVector<f64> {
        &self.log_norms
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.matrix.ncols()
    }

    /// Soft counts per component.
    pub fn counts(&self) -> DVector<f64> {
        DVector::from_fn(self.matrix.ncols(), |s, _| self.matrix.column(s).sum())
    }
}

/// Mean/precision prior coupling for the component parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanPrecisionCoupling {
    /// Joint Normal-Wishart prior p(mu, G) = W(G; a0, B0) N(mu; xi0, beta0 G).
    #[default]
    NormalWishart,
    /// Independent priors N(mu; xi0, beta0 E_prior[G]) and W(G; a0, B0); this
    /// makes the factorized posterior able to match the prior exactly.
    Factorized,
}

/// Proper conjugate priors for the mixture engine. Defaults are weak and
/// scale-aware: `a0 = d/2 + 1`, `B0 = eps * cov(data) * a0`, `beta0 = eps`,
/// `xi0 = mean(data)`, Dirichlet concentration 1.
#[derive(Debug, Clone)]
pub struct GmmPriors {
    pub lambda0: f64,
    pub a0: f64,
    pub b0: DMatrix<f64>,
    pub xi0: DVector<f64>,
    pub beta0: f64,
    pub coupling: MeanPrecisionCoupling,
}

impl GmmPriors {
    pub fn from_data(data: &Dataset, eps: f64) -> Result<GmmPriors> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(VbError::InvalidParameter(format!(
                "prior scale eps must be positive, got {eps}"
            )));
        }
        let d = data.dim();
        let a0 = d as f64 / 2.0 + 1.0;
        Ok(GmmPriors {
            lambda0: 1.0,
            a0,
            b0: data.covariance() * (eps * a0),
            xi0: data.mean(),
            beta0: eps,
            coupling: MeanPrecisionCoupling::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.xi0.len()
    }

    /// Half-degrees-of-freedom of the prior Wishart.
    pub(crate) fn half_dof0(&self) -> f64 {
        self.a0 + (self.dim() as f64 - 1.0) / 2.0
    }

    /// Prior mean precision E_prior[G] = half_dof0 * B0^-1.
    pub(crate) fn prior_mean_precision(&self) -> Result<DMatrix<f64>> {
        Ok(SpdFactor::new(&self.b0, "prior rate")?.inverse() * self.half_dof0())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0 && self.a0 > 0.0 && self.beta0 > 0.0) {
            return Err(VbError::InvalidParameter(
                "prior hyperparameters must be positive".into(),
            ));
        }
        if !is_spd(&self.b0) {
            return Err(VbError::InvalidParameter("prior rate must be SPD".into()));
        }
        if self.xi0.len() != self.b0.nrows() {
            return Err(VbError::DimensionMismatch(
                "prior location and rate dimensions differ".into(),
            ));
        }
        Ok(())
    }
}

/// Initialization of a per-structure fit.
#[derive(Debug, Clone)]
pub enum GmmInit {
    /// Farthest-point-style seeding of the means from the data, driven by the
    /// run seed; weights 1/m and precisions from the global data covariance.
    KmeansPlusPlus,
    /// Explicit starting statistics (used for reproducibility experiments).
    Explicit {
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        precisions: Vec<DMatrix<f64>>,
    },
}

/// Mixture engine configuration.
#[derive(Debug, Clone)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Relative free-energy change below which the fit stops.
    pub tol: f64,
    pub seed: u64,
    /// Scale of the auto-generated weak priors when `priors` is None.
    pub prior_eps: f64,
    pub priors: Option<GmmPriors>,
    pub init: GmmInit,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            max_iter: 500,
            tol: 1e-8,
            seed: 0,
            prior_eps: 1e-3,
            priors: None,
            init: GmmInit::KmeansPlusPlus,
        }
    }
}

/// Variational posterior hyperparameters of one mixture component.
#[derive(Debug, Clone)]
pub struct GmmComponent {
    /// Posterior mean location m_s.
    pub mean: DVector<f64>,
    /// Posterior precision of the mean, P_s.
    pub mean_precision: DMatrix<f64>,
    /// Wishart shape a_s.
    pub shape: f64,
    /// Wishart rate B_s.
    pub rate: DMatrix<f64>,
    pub alive: bool,
}

/// Full variational state of a mixture fit: Dirichlet concentrations over all
/// components (alive entries meaningful) plus per-component hyperparameters.
#[derive(Debug, Clone)]
pub struct GmmVarState {
    pub lambda: DVector<f64>,
    pub components: Vec<GmmComponent>,
}

impl GmmVarState {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn alive_count(&self) -> usize {
        self.components.iter().filter(|c| c.alive).count()
    }

    pub fn dim(&self) -> usize {
        self.components
            .first()
            .map(|c| c.mean.len())
            .unwrap_or(0)
    }

    /// State equal to the prior for every component ("zero information").
    pub fn prior_state(priors: &GmmPriors, m: usize) -> Result<GmmVarState> {
        priors.validate()?;
        let p0 = priors.prior_mean_precision()? * priors.beta0;
        let comp = GmmComponent {
            mean: priors.xi0.clone(),
            mean_precision: p0,
            shape: priors.a0,
            rate: priors.b0.clone(),
            alive: true,
        };
        Ok(GmmVarState {
            lambda: DVector::from_element(m, priors.lambda0),
            components: vec![comp; m],
        })
    }

    /// Sufficient-statistics view: weights from the soft counts, means from
    /// the posterior locations, precisions from the posterior Wishart means.
    pub fn to_stats(&self, counts: &DVector<f64>) -> Result<GmmSuffStats> {
        let n_total: f64 = counts.sum();
        let d = self.dim();
        let mut pi = DVector::zeros(self.n_components());
        let mut mu = Vec::with_capacity(self.n_components());
        let mut gamma = Vec::with_capacity(self.n_components());
        let mut alive = Vec::with_capacity(self.n_components());
        for (s, c) in self.components.iter().enumerate() {
            alive.push(c.alive);
            if c.alive {
                pi[s] = counts[s] / n_total;
                mu.push(c.mean.clone());
                let half_dof = c.shape + (d as f64 - 1.0) / 2.0;
                gamma.push(SpdFactor::new(&c.rate, "component rate")?.inverse() * half_dof);
            } else {
                pi[s] = 0.0;
                mu.push(c.mean.clone());
                gamma.push(DMatrix::identity(d, d));
            }
        }
        GmmSuffStats::new(pi, mu, gamma, alive)
    }
}
