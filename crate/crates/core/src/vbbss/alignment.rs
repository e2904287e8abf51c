//! Signed-permutation alignment of recovered sources against references.
//! Blind separation only identifies sources up to order and sign, so every
//! evaluation metric quotients those out.

use nalgebra::DMatrix;

use crate::error::{Result, VbError};

/// Best assignment of estimated columns onto reference columns.
#[derive(Debug, Clone)]
pub struct SignedAssignment {
    /// mapping[j] = (reference column, sign) for estimated column j.
    pub mapping: Vec<(usize, f64)>,
    /// sum of squared errors after alignment over sum of squared reference.
    pub relative_error: f64,
}

/// Exhaustive search over signed permutations (exact for the source counts
/// used here; guarded at 10 columns).
pub fn signed_permutation_error(
    estimated: &DMatrix<f64>,
    reference: &DMatrix<f64>,
) -> Result<SignedAssignment> {
    if estimated.shape() != reference.shape() {
        return Err(VbError::DimensionMismatch(format!(
            "estimated {:?} vs reference {:?}",
            estimated.shape(),
            reference.shape()
        )));
    }
    let m = estimated.ncols();
    if m == 0 || m > 10 {
        return Err(VbError::InvalidParameter(format!(
            "alignment supports 1..=10 columns, got {m}"
        )));
    }

    // cost of assigning estimated j to reference k with the optimal sign
    let mut cost = DMatrix::zeros(m, m);
    let mut sign = DMatrix::zeros(m, m);
    let mut ref_norm_sq = 0.0;
    for k in 0..m {
        ref_norm_sq += reference.column(k).norm_squared();
    }
    for j in 0..m {
        let est_sq = estimated.column(j).norm_squared();
        for k in 0..m {
            let dot = estimated.column(j).dot(&reference.column(k));
            cost[(j, k)] = est_sq + reference.column(k).norm_squared() - 2.0 * dot.abs();
            sign[(j, k)] = if dot >= 0.0 { 1.0 } else { -1.0 };
        }
    }

    let mut perm: Vec<usize> = (0..m).collect();
    let mut best_perm = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(j, &k)| cost[(j, k)]).sum();
        if total < best_cost {
            best_cost = total;
            best_perm = p.to_vec();
        }
    });

    let mapping = best_perm
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, sign[(j, k)]))
        .collect();
    Ok(SignedAssignment {
        mapping,
        relative_error: best_cost.max(0.0) / ref_norm_sq.max(f64::MIN_POSITIVE),
    })
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_is_invariant_under_signed_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let truth = DMatrix::from_fn(50, 4, |_, _| rng.gen_range(-2.0..2.0));
        // scramble: columns (2, 0, 3, 1) with signs (-, +, -, +)
        let order = [2usize, 0, 3, 1];
        let signs = [-1.0, 1.0, -1.0, 1.0];
        let scrambled = DMatrix::from_fn(50, 4, |r, c| signs[c] * truth[(r, order[c])]);

        let aligned = signed_permutation_error(&scrambled, &truth).unwrap();
        assert!(aligned.relative_error < 1e-24);
        for (j, &(k, s)) in aligned.mapping.iter().enumerate() {
            assert_eq!(k, order[j]);
            assert_eq!(s, signs[j]);
        }
    }

    #[test]
    fn error_grows_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let truth = DMatrix::from_fn(200, 3, |_, _| rng.gen_range(-2.0..2.0));
        let mut last = 0.0;
        for noise in [0.01, 0.1, 0.5] {
            let noisy = DMatrix::from_fn(200, 3, |r, c| {
                truth[(r, c)] + noise * rng.gen_range(-1.0..1.0)
            });
            let err = signed_permutation_error(&noisy, &truth)
                .unwrap()
                .relative_error;
            assert!(err > last);
            last = err;
        }
    }
}
