//! Log-gamma family of special functions used throughout the posterior
//! updates and free-energy accounting.
//!
//! `digamma` follows the classic recurrence-plus-asymptotic-series scheme:
//! the argument is shifted above 8 with Psi(x) = Psi(x+1) - 1/x and the tail
//! is evaluated with the Bernoulli-number expansion. `ln_gamma` uses the same
//! approach with the Stirling series. Absolute error is at the 1e-13 level
//! for arguments above ~1e-2; below that the result is dominated by the 1/x
//! pole and accuracy is limited by f64 spacing rather than the series.

use crate::error::{Result, VbError};

/// Euler-Mascheroni constant; Psi(1) = -EULER_GAMMA.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// ln(2 pi), the Gaussian normalizer constant.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Digamma function Psi(x) = d/dx ln Gamma(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(VbError::Domain(format!(
            "digamma requires x > 0, got {x}"
        )));
    }
    let mut value = 0.0;
    let mut z = x;
    while z < 8.0 {
        value -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Psi(z) ~ ln z - 1/2z - sum B_2n / (2n z^2n), truncated after z^-14.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(value + z.ln() - 0.5 * inv - series)
}

/// Natural log of the Gamma function for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(VbError::Domain(format!(
            "ln_gamma requires x > 0, got {x}"
        )));
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift -= z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2
                                        * (1.0 / 1188.0
                                            - inv2 * (691.0 / 360360.0 - inv2 / 156.0))))));
    Ok(shift + (z - 0.5) * z.ln() - z + 0.5 * LN_2PI + series)
}

/// Multivariate log-gamma: ln Gamma_d(x) = d(d-1)/4 ln pi + sum_i ln Gamma(x + (1-i)/2).
///
/// Defined for x > (d-1)/2.
pub fn ln_multigamma(d: usize, x: f64) -> Result<f64> {
    if d == 0 {
        return Err(VbError::InvalidParameter(
            "ln_multigamma requires d >= 1".into(),
        ));
    }
    let dd = d as f64;
    if !(x > (dd - 1.0) / 2.0) {
        return Err(VbError::Domain(format!(
            "ln_multigamma requires x > (d-1)/2 = {}, got {x}",
            (dd - 1.0) / 2.0
        )));
    }
    let mut sum = dd * (dd - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for i in 1..=d {
        sum += ln_gamma(x + (1.0 - i as f64) / 2.0)?;
    }
    Ok(sum)
}

/// Multivariate digamma: sum_i Psi(x + (1-i)/2), the derivative of `ln_multigamma`.
pub fn multidigamma(d: usize, x: f64) -> Result<f64> {
    let dd = d as f64;
    if !(x > (dd - 1.0) / 2.0) {
        return Err(VbError::Domain(format!(
            "multidigamma requires x > (d-1)/2, got {x}"
        )));
    }
    let mut sum = 0.0;
    for i in 1..=d {
        sum += digamma(x + (1.0 - i as f64) / 2.0)?;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn digamma_recurrence_on_grid() {
        // Psi(x+1) - Psi(x) = 1/x, checked to 1e-12 across the working range.
        let mut x = 0.1;
        while x <= 100.0 {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert_abs_diff_eq!(lhs, 1.0 / x, epsilon = 1e-12);
            x += 0.1;
        }
    }

    #[test]
    fn digamma_known_values() {
        // Psi(1) = -gamma and Psi(1/2) = -gamma - 2 ln 2 are exact identities.
        assert_abs_diff_eq!(digamma(1.0).unwrap(), -EULER_GAMMA, epsilon = 1e-13);
        assert_abs_diff_eq!(
            digamma(0.5).unwrap(),
            -EULER_GAMMA - 2.0 * std::f64::consts::LN_2,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            digamma(2.0).unwrap() - digamma(1.0).unwrap(),
            1.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn digamma_matches_independent_implementation() {
        // statrs ships Algorithm AS 103, an unrelated code path.
        for &x in &[1e-6, 1e-3, 0.25, 0.5, 1.0, 1.5, 3.0, 7.7, 42.0, 500.0] {
            let reference = statrs::function::gamma::digamma(x);
            let scale = 1.0 + reference.abs();
            assert!(
                (digamma(x).unwrap() - reference).abs() / scale < 1e-12,
                "digamma({x}) mismatch"
            );
        }
    }

    #[test]
    fn digamma_rejects_nonpositive() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.0).is_err());
        assert!(digamma(f64::NAN).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0).unwrap(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(2.0).unwrap(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(5.0).unwrap(), 24f64.ln(), epsilon = 1e-12);
        // Gamma(1/2) = sqrt(pi)
        assert_abs_diff_eq!(
            ln_gamma(0.5).unwrap(),
            0.5 * std::f64::consts::PI.ln(),
            epsilon = 1e-13
        );
        for &x in &[0.1, 0.9, 1.46, 3.2, 11.0, 123.0] {
            let reference = statrs::function::gamma::ln_gamma(x);
            assert_abs_diff_eq!(ln_gamma(x).unwrap(), reference, epsilon = 1e-11);
        }
    }

    #[test]
    fn multigamma_reduces_to_scalar() {
        assert_abs_diff_eq!(
            ln_multigamma(1, 2.5).unwrap(),
            ln_gamma(2.5).unwrap(),
            epsilon = 1e-14
        );
        // Gamma_2(x) = pi^(1/2) Gamma(x) Gamma(x - 1/2)
        let x = 3.0;
        let expected =
            0.5 * std::f64::consts::PI.ln() + ln_gamma(x).unwrap() + ln_gamma(x - 0.5).unwrap();
        assert_abs_diff_eq!(ln_multigamma(2, x).unwrap(), expected, epsilon = 1e-13);
        assert!(ln_multigamma(3, 0.9).is_err());
    }

    #[test]
    fn multidigamma_is_derivative_of_multigamma() {
        let (d, x, h) = (3, 4.2, 1e-6);
        let fd =
            (ln_multigamma(d, x + h).unwrap() - ln_multigamma(d, x - h).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(multidigamma(d, x).unwrap(), fd, epsilon = 1e-8);
    }
}
