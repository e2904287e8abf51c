use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Result, VbError};

/// Seed `m` component means from the data: the first is a random point, each
/// further one is drawn with probability proportional to the squared distance
/// to the nearest already-chosen seed. Deterministic given `seed`.
pub fn kmeans_plus_plus_seeds(data: &Dataset, m: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let n = data.len();
    if n == 0 || m == 0 {
        return Err(VbError::InvalidParameter(
            "seeding needs data and m >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds: Vec<DVector<f64>> = Vec::with_capacity(m);
    seeds.push(data.row(rng.gen_range(0..n)));
    let mut dist_sq: Vec<f64> = (0..n)
        .map(|r| (data.row(r) - &seeds[0]).norm_squared())
        .collect();
    while seeds.len() < m {
        let total: f64 = dist_sq.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (r, &d2) in dist_sq.iter().enumerate() {
                if u < d2 {
                    idx = r;
                    break;
                }
                u -= d2;
            }
            idx
        } else {
            // all remaining points coincide with a seed
            rng.gen_range(0..n)
        };
        let chosen = data.row(pick);
        for r in 0..n {
            let d2 = (data.row(r) - &chosen).norm_squared();
            if d2 < dist_sq[r] {
                dist_sq[r] = d2;
            }
        }
        seeds.push(chosen);
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn seeding_is_deterministic_and_spreads() {
        let values = DMatrix::from_row_slice(
            6,
            1,
            &[0.0, 0.1, 0.2, 10.0, 10.1, 10.2],
        );
        let data = Dataset::from_matrix(values).unwrap();
        let a = kmeans_plus_plus_seeds(&data, 2, 3).unwrap();
        let b = kmeans_plus_plus_seeds(&data, 2, 3).unwrap();
        assert_eq!(a, b);
        // the two seeds land in different clusters almost surely
        assert!((a[0][0] - a[1][0]).abs() > 5.0);
    }

    #[test]
    fn duplicate_points_still_seed() {
        let data =
            Dataset::from_matrix(DMatrix::from_element(4, 1, 1.0)).unwrap();
        let seeds = kmeans_plus_plus_seeds(&data, 3, 0).unwrap();
        assert_eq!(seeds.len(), 3);
    }
}
