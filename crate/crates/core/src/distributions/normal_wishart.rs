use nalgebra::{DMatrix, DVector};

use super::{KlDivergence, WishartParams};
use crate::error::{Result, VbError};
use crate::linalg::is_symmetric;

/// Normal-Wishart: `NW(x, G; a, B, xi, beta) = Wishart(G; a, B) * Normal(x; xi, beta*G)`,
/// with the Normal conditioned on the precision `beta * G`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalWishartParams {
    wishart: WishartParams,
    xi: DVector<f64>,
    beta: f64,
}

impl NormalWishartParams {
    pub fn new(a: f64, b: DMatrix<f64>, xi: DVector<f64>, beta: f64) -> Result<Self> {
        if xi.len() != b.nrows() {
            return Err(VbError::DimensionMismatch(format!(
                "mean location of dimension {} with {}x{} rate matrix",
                xi.len(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(VbError::InvalidParameter(format!(
                "mean-precision scale beta must be positive, got {beta}"
            )));
        }
        Ok(NormalWishartParams {
            wishart: WishartParams::new(a, b)?,
            xi,
            beta,
        })
    }

    pub fn wishart(&self) -> &WishartParams {
        &self.wishart
    }

    pub fn shape(&self) -> f64 {
        self.wishart.shape()
    }

    pub fn rate(&self) -> &DMatrix<f64> {
        self.wishart.rate()
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }
}

/// Conjugate update from responsibility-weighted data moments.
///
/// `weight` is the soft count assigned to this node, `first_moment` the
/// weighted mean of the assigned data, and `scatter` the weighted second
/// central moment about `first_moment` per unit weight (so for hard unit
/// assignments it is the ordinary sample covariance of the assigned points).
///
/// The shape and mean-precision scale both increase by `weight`; the
/// location and rate follow the standard conjugate forms
///
/// ```text
/// xi'  = (beta*xi + w*ybar) / (beta + w)
/// B'   = B + [w*S + (beta*w)/(beta+w) * (ybar-xi)(ybar-xi)^T] / 2
/// ```
///
/// (weighted scatter plus the beta-shrinkage cross term).
pub fn normal_wishart_update(
    prior: &NormalWishartParams,
    weight: f64,
    first_moment: &DVector<f64>,
    scatter: &DMatrix<f64>,
) -> Result<NormalWishartParams> {
    let d = prior.dim();
    if first_moment.len() != d || scatter.nrows() != d || scatter.ncols() != d {
        return Err(VbError::DimensionMismatch(
            "moment dimensions do not match the prior".into(),
        ));
    }
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(VbError::InvalidParameter(format!(
            "weight must be nonnegative and finite, got {weight}"
        )));
    }
    if !is_symmetric(scatter, 1e-9) {
        return Err(VbError::InvalidParameter(
            "scatter must be symmetric".into(),
        ));
    }
    // PSD check: all eigenvalues nonnegative up to rounding.
    let eigs = scatter.clone().symmetric_eigenvalues();
    let scale = 1.0 + eigs.iter().fold(0f64, |acc, &e| acc.max(e.abs()));
    if eigs.iter().any(|&e| e < -1e-9 * scale) {
        return Err(VbError::InvalidParameter(
            "scatter must be positive semi-definite".into(),
        ));
    }

    if weight == 0.0 {
        return Ok(prior.clone());
    }

    let beta_post = prior.beta + weight;
    let xi_post = (prior.xi() * prior.beta + first_moment * weight) / beta_post;
    let diff = first_moment - prior.xi();
    let shrink = prior.beta * weight / beta_post;
    let mut rate_post = prior.rate()
        + (scatter * weight + &diff * diff.transpose() * shrink).scale(0.5);
    crate::linalg::symmetrize(&mut rate_post);
    NormalWishartParams::new(prior.shape() + weight, rate_post, xi_post, beta_post)
}

impl KlDivergence for NormalWishartParams {
    fn kl_divergence(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(VbError::DimensionMismatch(format!(
                "Normal-Wishart KL between dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let d = self.dim() as f64;
        // KL factorizes as KL(W_q || W_p) + E_{G~q}[ KL(N(xi_q, b_q G) || N(xi_p, b_p G)) ].
        let kl_w = self.wishart.kl_divergence(&other.wishart)?;
        let mean_prec = self.wishart.mean()?;
        let diff = &self.xi - &other.xi;
        let quad = (mean_prec * &diff).dot(&diff);
        let ratio = other.beta / self.beta;
        let kl_n = 0.5 * (d * ratio - d + other.beta * quad + d * (self.beta / other.beta).ln());
        Ok((kl_w + kl_n).max(0.0))
    }
}
