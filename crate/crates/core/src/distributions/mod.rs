//! Conjugate-exponential distribution types, their posterior-update rules,
//! expectations, geometric means, and closed-form KL divergences.
//!
//! Parametrization conventions (fixed across the whole crate):
//!
//! * Dirichlet over the (m-1)-simplex with concentrations `lambda_s > 0`.
//! * Normal carries a *precision* matrix; the quadratic form in the density
//!   exponent is `-(x-mu)^T P (x-mu) / 2` with P the precision itself.
//! * Wishart uses density `|G|^(a-1) exp(-tr(B G))` with shape `a > 0` and
//!   rate matrix `B` (symmetric positive definite). This maps onto the
//!   textbook Wishart `W_d(V, n)` via `n = 2a + d - 1` and `V = B^-1 / 2`;
//!   for d = 1 it is exactly Gamma(shape a, rate B).
//! * Normal-Wishart combines the two: `NW(x, G; a, B, xi, beta) =
//!   Wishart(G; a, B) * Normal(x; xi, beta*G)`.

mod dirichlet;
mod normal;
mod normal_wishart;
mod wishart;

pub use dirichlet::{dirichlet_geometric_mean, dirichlet_update, DirichletParams};
pub use normal::NormalParams;
pub use normal_wishart::{normal_wishart_update, NormalWishartParams};
pub use wishart::{wishart_geometric_mean_det, WishartParams};

use crate::error::Result;

/// Closed-form KL divergence within one distribution family.
///
/// Family mismatch is unrepresentable here (the two arguments share a type);
/// a dimension mismatch is reported as an error.
pub trait KlDivergence {
    fn kl_divergence(&self, other: &Self) -> Result<f64>;
}
