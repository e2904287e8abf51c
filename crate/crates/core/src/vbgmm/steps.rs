//! The mixture E/M update rules in their published closed form, operating on
//! sufficient statistics. The fitting engine in [`super::engine`] uses the
//! prior-aware generalization of these rules; the functions here are the
//! reference operations (and the classifier for new points).

use nalgebra::{DMatrix, DVector};

use super::{GmmSuffStats, Responsibilities};
use crate::dataset::Dataset;
use crate::distributions::{
    dirichlet_geometric_mean, wishart_geometric_mean_det, DirichletParams, WishartParams,
};
use crate::error::{Result, VbError};
use crate::linalg::{log_sum_exp, symmetrize, SpdFactor};
use crate::special::LN_2PI;

/// Diagonal jitter scale applied once when a scatter matrix fails to factor.
const SCATTER_JITTER: f64 = 1e-9;

/// Per-component constant term and precision used by the E-step weights.
struct ComponentTerms {
    /// ln(geometric-mean weight) + 0.5 ln(det term) - d/2 ln(2 pi) - d/(2 N pi_s)
    constant: f64,
    precision: DMatrix<f64>,
}

fn component_terms(
    stats: &GmmSuffStats,
    n_total: usize,
) -> Result<Vec<Option<ComponentTerms>>> {
    if stats.alive_count() == 0 {
        return Err(VbError::ModelCollapse);
    }
    let d = stats.dim() as f64;
    let n = n_total as f64;

    // Geometric-mean weights from the Dirichlet posterior (N pi_s + 1) over
    // the alive components.
    let alive: Vec<usize> = (0..stats.n_components())
        .filter(|&s| stats.alive[s])
        .collect();
    let lambdas = DVector::from_iterator(
        alive.len(),
        alive.iter().map(|&s| n * stats.pi_bar[s] + 1.0),
    );
    let pi_tilde = dirichlet_geometric_mean(&DirichletParams::new(lambdas)?)?;

    let mut terms: Vec<Option<ComponentTerms>> = Vec::with_capacity(stats.n_components());
    let mut alive_idx = 0usize;
    for s in 0..stats.n_components() {
        if !stats.alive[s] {
            terms.push(None);
            continue;
        }
        let n_pi = n * stats.pi_bar[s];
        // Wishart view of the precision posterior: a = N pi / 2, B = a Gamma^-1.
        let a = n_pi / 2.0;
        let rate = SpdFactor::new(&stats.gamma_bar[s], "gamma_bar")?.inverse() * a;
        let gamma_tilde = wishart_geometric_mean_det(&WishartParams::new(a, rate)?)?;
        let constant = pi_tilde[alive_idx].ln() + 0.5 * gamma_tilde.ln()
            - 0.5 * d * LN_2PI
            - d / (2.0 * n_pi);
        terms.push(Some(ComponentTerms {
            constant,
            precision: stats.gamma_bar[s].clone(),
        }));
        alive_idx += 1;
    }
    Ok(terms)
}

fn log_weight(terms: &ComponentTerms, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let diff = y - mu;
    terms.constant - 0.5 * (&terms.precision * &diff).dot(&diff)
}

/// E-step: row-normalized responsibilities of every instance, computed in
/// log space from
///
/// ```text
/// q(s_n) ~ pi~_s * |Gamma~_s / 2pi|^(1/2)
///          * exp(-(y_n - mu_s)^T Gamma_s (y_n - mu_s) / 2) * exp(-d / (2 N pi_s))
/// ```
///
/// with `pi~` the Dirichlet geometric mean of (N pi_s + 1, ...) and `Gamma~`
/// the Wishart geometric-mean determinant.
pub fn e_step(data: &Dataset, stats: &GmmSuffStats, n_total: usize) -> Result<Responsibilities> {
    let terms = component_terms(stats, n_total)?;
    let n = data.len();
    let m = stats.n_components();
    let mut matrix = DMatrix::zeros(n, m);
    let mut log_norms = DVector::zeros(n);
    let mut row = vec![f64::NEG_INFINITY; m];
    for r in 0..n {
        let y = data.row(r);
        for s in 0..m {
            row[s] = match &terms[s] {
                Some(t) => log_weight(t, &y, &stats.mu_bar[s]),
                None => f64::NEG_INFINITY,
            };
        }
        let log_z = log_sum_exp(&row);
        if !log_z.is_finite() {
            return Err(VbError::Numerical(format!(
                "E-step normalizer is not finite at instance {r}"
            )));
        }
        for s in 0..m {
            matrix[(r, s)] = if stats.alive[s] {
                (row[s] - log_z).exp()
            } else {
                0.0
            };
        }
        log_norms[r] = log_z;
    }
    Responsibilities::new(matrix, log_norms)
}

/// M-step: new sufficient statistics from responsibility-weighted averages
/// `<f(y)>_s = sum_n f(y_n) q(s_n) / N`,
///
/// ```text
/// pi_s    = <1>_s
/// mu_s    = <y>_s / pi_s
/// Gamma_s = (1 - 1/(N pi_s)) * (<(y-mu_s)(y-mu_s)^T>_s / pi_s)^-1
/// ```
///
/// A component whose soft count drops to N pi_s <= 1 is declared dead before
/// the (1 - 1/(N pi_s)) factor is evaluated and the surviving weights are
/// renormalized.
pub fn m_step(data: &Dataset, resp: &Responsibilities) -> Result<GmmSuffStats> {
    let n = data.len();
    let d = data.dim();
    if resp.n_rows() != n {
        return Err(VbError::DimensionMismatch(format!(
            "{} responsibility rows for {} instances",
            resp.n_rows(),
            n
        )));
    }
    let m = resp.n_components();
    let counts = resp.counts();
    let r = resp.matrix();

    let mut pi = DVector::zeros(m);
    let mut mu = Vec::with_capacity(m);
    let mut gamma = Vec::with_capacity(m);
    let mut alive = Vec::with_capacity(m);

    for s in 0..m {
        let n_s = counts[s];
        if n_s <= 1.0 {
            // dead: weight at or below one instance
            pi[s] = 0.0;
            mu.push(DVector::zeros(d));
            gamma.push(DMatrix::identity(d, d));
            alive.push(false);
            continue;
        }
        let mut mean = DVector::zeros(d);
        for row in 0..n {
            mean += data.row(row) * r[(row, s)];
        }
        mean /= n_s;

        let mut scatter = DMatrix::zeros(d, d);
        for row in 0..n {
            let c = data.row(row) - &mean;
            scatter.ger(r[(row, s)] / n_s, &c, &c, 1.0);
        }
        symmetrize(&mut scatter);

        let factor = 1.0 - 1.0 / n_s;
        let inv = SpdFactor::new_with_jitter(&scatter, SCATTER_JITTER, "M-step scatter")?
            .inverse();
        let mut prec = inv * factor;
        symmetrize(&mut prec);

        pi[s] = n_s / n as f64;
        mu.push(mean);
        gamma.push(prec);
        alive.push(true);
    }

    if !alive.iter().any(|&a| a) {
        return Err(VbError::ModelCollapse);
    }
    // Renormalize in case dead components carried weight.
    let total: f64 = pi.iter().sum();
    pi /= total;
    GmmSuffStats::new(pi, mu, gamma, alive)
}

/// Prune components whose weight fell to pi_s <= 1/N: mark them dead, zero
/// their responsibility columns, renormalize the rows over the survivors and
/// renormalize the surviving weights.
pub fn prune(
    stats: &GmmSuffStats,
    resp: &Responsibilities,
    n_total: usize,
) -> Result<(GmmSuffStats, Responsibilities)> {
    let threshold = 1.0 / n_total as f64;
    let mut stats = stats.clone();
    let mut changed = false;
    for s in 0..stats.n_components() {
        if stats.alive[s] && stats.pi_bar[s] <= threshold {
            stats.alive[s] = false;
            stats.pi_bar[s] = 0.0;
            changed = true;
        }
    }
    if stats.alive_count() == 0 {
        return Err(VbError::ModelCollapse);
    }
    // responsibility mass sitting on a dead column also forces the cleanup pass
    let stranded = (0..stats.n_components())
        .any(|s| !stats.alive[s] && resp.matrix().column(s).iter().any(|&v| v > 0.0));
    if !changed && !stranded {
        return Ok((stats, resp.clone()));
    }

    let alive_total: f64 = stats
        .pi_bar
        .iter()
        .zip(&stats.alive)
        .filter(|(_, &a)| a)
        .map(|(&p, _)| p)
        .sum();
    for s in 0..stats.n_components() {
        if stats.alive[s] {
            stats.pi_bar[s] /= alive_total;
        }
    }

    let mut matrix = resp.matrix().clone();
    let mut log_norms = resp.log_norms().clone();
    let alive_count = stats.alive_count();
    for r in 0..matrix.nrows() {
        let mut row_sum = 0.0;
        for s in 0..matrix.ncols() {
            if !stats.alive[s] {
                matrix[(r, s)] = 0.0;
            } else {
                row_sum += matrix[(r, s)];
            }
        }
        if row_sum > 0.0 {
            for s in 0..matrix.ncols() {
                matrix[(r, s)] /= row_sum;
            }
            log_norms[r] += row_sum.ln();
        } else {
            // the instance was explained only by pruned components
            for s in 0..matrix.ncols() {
                matrix[(r, s)] = if stats.alive[s] {
                    1.0 / alive_count as f64
                } else {
                    0.0
                };
            }
        }
    }
    stats.validate()?;
    Ok((stats, Responsibilities::new(matrix, log_norms)?))
}

/// Most likely component for a new point: argmax over the E-step weights,
/// ties broken toward the lower index.
pub fn classify_stats(
    stats: &GmmSuffStats,
    n_total: usize,
    y_new: &DVector<f64>,
) -> Result<usize> {
    let terms = component_terms(stats, n_total)?;
    let mut best: Option<(usize, f64)> = None;
    for s in 0..stats.n_components() {
        if let Some(t) = &terms[s] {
            let w = log_weight(t, y_new, &stats.mu_bar[s]);
            match best {
                Some((_, bw)) if w <= bw => {}
                _ => best = Some((s, w)),
            }
        }
    }
    best.map(|(s, _)| s).ok_or(VbError::ModelCollapse)
}
