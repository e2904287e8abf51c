use nalgebra::DMatrix;

use super::KlDivergence;
use crate::error::{Result, VbError};
use crate::linalg::{is_spd, SpdFactor};
use crate::special::{digamma, ln_multigamma, multidigamma};

/// Wishart distribution over precision matrices in the rate parametrization
/// `|G|^(a-1) exp(-tr(B G))`.
///
/// The half-degrees-of-freedom of the equivalent textbook Wishart is
/// `a + (d-1)/2`; for d = 1 this type is Gamma(shape a, rate B).
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    a: f64,
    b: DMatrix<f64>,
}

impl WishartParams {
    pub fn new(a: f64, b: DMatrix<f64>) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(VbError::InvalidParameter(format!(
                "Wishart shape must be positive and finite, got {a}"
            )));
        }
        if !is_spd(&b) {
            return Err(VbError::InvalidParameter(
                "Wishart rate matrix must be symmetric positive definite".into(),
            ));
        }
        Ok(WishartParams { a, b })
    }

    pub fn shape(&self) -> f64 {
        self.a
    }

    pub fn rate(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// Half-degrees-of-freedom of the equivalent textbook Wishart.
    pub fn half_dof(&self) -> f64 {
        self.a + (self.dim() as f64 - 1.0) / 2.0
    }

    /// Posterior mean E[G] = (a + (d-1)/2) B^-1.
    pub fn mean(&self) -> Result<DMatrix<f64>> {
        let f = SpdFactor::new(&self.b, "Wishart rate")?;
        Ok(f.inverse() * self.half_dof())
    }

    /// Exact E[log |G|] = multidigamma(d, a + (d-1)/2) - log |B|.
    pub fn expected_log_det(&self) -> Result<f64> {
        let f = SpdFactor::new(&self.b, "Wishart rate")?;
        Ok(multidigamma(self.dim(), self.half_dof())? - f.log_det)
    }

    /// log of the normalization constant c with density c |G|^(a-1) e^{-tr BG}.
    pub fn log_normalizer(&self) -> Result<f64> {
        let f = SpdFactor::new(&self.b, "Wishart rate")?;
        Ok(self.half_dof() * f.log_det - ln_multigamma(self.dim(), self.half_dof())?)
    }

    /// Differential entropy -E[log q(G)].
    pub fn entropy(&self) -> Result<f64> {
        // tr(B E[G]) = d * half_dof.
        Ok(-(self.log_normalizer()?)
            - (self.a - 1.0) * self.expected_log_det()?
            + self.dim() as f64 * self.half_dof())
    }
}

/// Geometric mean of the determinant, |B|^-1 exp(d Psi(a)).
///
/// This is the determinant factor of the mixture E-step; it uses d*Psi(a)
/// rather than the exact multivariate sum `multidigamma(d, a + (d-1)/2)`
/// (available as [`WishartParams::expected_log_det`]), so for d > 1 it is an
/// approximation of exp(E[log |G|]). Exact for d = 1.
pub fn wishart_geometric_mean_det(p: &WishartParams) -> Result<f64> {
    let f = SpdFactor::new(p.rate(), "Wishart rate")?;
    Ok((p.dim() as f64 * digamma(p.shape())? - f.log_det).exp())
}

impl KlDivergence for WishartParams {
    fn kl_divergence(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(VbError::DimensionMismatch(format!(
                "Wishart KL between dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let e_log_det = self.expected_log_det()?;
        let e_mean = self.mean()?;
        let kl = self.log_normalizer()? - other.log_normalizer()?
            + (self.a - other.a) * e_log_det
            - ((&self.b - &other.b) * e_mean).trace();
        Ok(kl.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_gamma;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn geometric_mean_det_scalar_cases() {
        // d=1, a=1, B=1: exp(Psi(1)) = exp(-gamma)
        let p = WishartParams::new(1.0, DMatrix::identity(1, 1)).unwrap();
        assert_abs_diff_eq!(
            wishart_geometric_mean_det(&p).unwrap(),
            (-crate::special::EULER_GAMMA).exp(),
            epsilon = 1e-12
        );

        // d=1, a=3, B=2: 0.5 exp(Psi(3)), Psi(3) = Psi(1) + 1 + 1/2
        let p = WishartParams::new(3.0, DMatrix::from_element(1, 1, 2.0)).unwrap();
        let psi3 = -crate::special::EULER_GAMMA + 1.0 + 0.5;
        assert_abs_diff_eq!(
            wishart_geometric_mean_det(&p).unwrap(),
            0.5 * psi3.exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn geometric_mean_det_identity_rate() {
        // B = I, d = 2: exp(2 Psi(a)) for any a.
        for &a in &[0.7, 1.0, 4.2] {
            let p = WishartParams::new(a, DMatrix::identity(2, 2)).unwrap();
            assert_abs_diff_eq!(
                wishart_geometric_mean_det(&p).unwrap(),
                (2.0 * digamma(a).unwrap()).exp(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn scalar_mean_and_log_det_match_gamma() {
        // d=1: Gamma(shape a, rate B) has E[g] = a/B, E[log g] = Psi(a) - ln B.
        let p = WishartParams::new(2.5, DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_abs_diff_eq!(p.mean().unwrap()[(0, 0)], 2.5 / 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(
            p.expected_log_det().unwrap(),
            digamma(2.5).unwrap() - 4f64.ln(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn kl_identity_is_zero() {
        let b = dmatrix![2.0, 0.3; 0.3, 1.0];
        let p = WishartParams::new(1.7, b).unwrap();
        assert_abs_diff_eq!(p.kl_divergence(&p).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_kl_matches_quadrature() {
        // 1-D Wishart is a Gamma; integrate q log(q/p) numerically.
        let (aq, bq) = (2.0, 3.0);
        let (ap, bp) = (1.0, 1.0);
        let q = WishartParams::new(aq, DMatrix::from_element(1, 1, bq)).unwrap();
        let p = WishartParams::new(ap, DMatrix::from_element(1, 1, bp)).unwrap();
        let kl = q.kl_divergence(&p).unwrap();

        let logq = |g: f64| aq * bq.ln() - ln_gamma(aq).unwrap() + (aq - 1.0) * g.ln() - bq * g;
        let logp = |g: f64| ap * bp.ln() - ln_gamma(ap).unwrap() + (ap - 1.0) * g.ln() - bp * g;
        // Simpson rule on (0, 40] with a fine grid; the integrand vanishes at 0.
        let steps = 400_000;
        let hi = 40.0;
        let h = hi / steps as f64;
        let f = |g: f64| (logq(g)).exp() * (logq(g) - logp(g));
        let mut integral = 0.0;
        for k in 0..steps {
            let x0 = k as f64 * h + 1e-12;
            let x1 = x0 + 0.5 * h;
            let x2 = x0 + h;
            integral += h / 6.0 * (f(x0) + 4.0 * f(x1) + f(x2));
        }
        assert_abs_diff_eq!(kl, integral, epsilon = 1e-6);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let d = rng.gen_range(1..4);
            let make = |rng: &mut rand_chacha::ChaCha8Rng| {
                let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
                let b = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
                WishartParams::new(rng.gen_range(0.2..8.0), b).unwrap()
            };
            let q = make(&mut rng);
            let p = make(&mut rng);
            assert!(q.kl_divergence(&p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(WishartParams::new(0.0, DMatrix::identity(1, 1)).is_err());
        assert!(WishartParams::new(1.0, DMatrix::from_element(1, 1, -1.0)).is_err());
        let asym = dmatrix![1.0, 0.5; 0.0, 1.0];
        assert!(WishartParams::new(1.0, asym).is_err());
    }
}
