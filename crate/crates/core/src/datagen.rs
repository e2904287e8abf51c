//! Seeded synthetic-data generators for the benchmark scenarios: Gaussian
//! mixtures, a noisy 3-D spiral, and noisy linear mixtures of logistic
//! sources. Everything is deterministic given (spec, seed).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{Result, VbError};
use crate::linalg::{is_spd, SpdFactor};

/// Parameters of a Gaussian-mixture draw. Covariances are plain covariance
/// matrices (not precisions).
#[derive(Debug, Clone)]
pub struct GmmGenSpec {
    pub seed: u64,
    pub n: usize,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl GmmGenSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(VbError::InvalidParameter(
                "weights, means and covariances must have equal nonzero length".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(VbError::InvalidParameter(format!(
                "weights must be nonnegative and sum to 1, got sum {total}"
            )));
        }
        let d = self.means[0].len();
        for (i, (m, c)) in self.means.iter().zip(&self.covariances).enumerate() {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(VbError::DimensionMismatch(format!(
                    "component {i} has inconsistent dimensions"
                )));
            }
            if !is_spd(c) {
                return Err(VbError::InvalidParameter(format!(
                    "component {i} covariance is not symmetric positive definite"
                )));
            }
        }
        if self.n == 0 {
            return Err(VbError::InvalidParameter("need n >= 1 points".into()));
        }
        Ok(())
    }

    /// Well-separated three-component 2-D mixture (the unsupervised-clustering
    /// benchmark scenario): 600 points by default.
    pub fn well_separated_triple(seed: u64, n: usize) -> GmmGenSpec {
        GmmGenSpec {
            seed,
            n,
            weights: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0],
            means: vec![
                DVector::from_column_slice(&[0.0, 0.0]),
                DVector::from_column_slice(&[6.0, 0.0]),
                DVector::from_column_slice(&[0.0, 6.0]),
            ],
            covariances: vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
                DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.0, 1.2]),
            ],
        }
    }
}

/// Draw a mixture dataset plus the true component label of each point.
pub fn sample_gmm(spec: &GmmGenSpec) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let d = spec.means[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Pre-factor the covariances.
    let mut chols = Vec::with_capacity(spec.covariances.len());
    for c in &spec.covariances {
        let f = SpdFactor::new(c, "generator covariance")?;
        // lower-triangular factor for correlated draws
        let l = nalgebra::Cholesky::new(c.clone())
            .ok_or_else(|| VbError::Singular("generator covariance".into()))?
            .l();
        chols.push(l);
        let _ = f;
    }

    let mut values = DMatrix::zeros(spec.n, d);
    let mut labels = Vec::with_capacity(spec.n);
    for r in 0..spec.n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut label = spec.weights.len() - 1;
        for (s, &w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                label = s;
                break;
            }
        }
        let z = DVector::from_fn(d, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let y = &spec.means[label] + &chols[label] * z;
        for c in 0..d {
            values[(r, c)] = y[c];
        }
        labels.push(label);
    }
    Ok((Dataset::from_matrix(values)?, labels))
}

/// Noisy 3-D spiral parameters: points (t cos t, t sin t, c t) with isotropic
/// Gaussian noise, t uniform on [t_min, t_max].
#[derive(Debug, Clone)]
pub struct SpiralGenSpec {
    pub seed: u64,
    pub n: usize,
    pub c: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub noise_sigma: f64,
}

impl Default for SpiralGenSpec {
    fn default() -> Self {
        SpiralGenSpec {
            seed: 0,
            n: 800,
            c: 0.3,
            t_min: 0.0,
            t_max: 4.0 * std::f64::consts::PI,
            noise_sigma: 0.5,
        }
    }
}

pub fn sample_spiral(spec: &SpiralGenSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(VbError::InvalidParameter("need n >= 1 points".into()));
    }
    if !(spec.t_max > spec.t_min) || spec.noise_sigma < 0.0 {
        return Err(VbError::InvalidParameter(
            "spiral needs t_max > t_min and noise_sigma >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = DMatrix::zeros(spec.n, 3);
    for r in 0..spec.n {
        let t = rng.gen_range(spec.t_min..spec.t_max);
        let base = [t * t.cos(), t * t.sin(), spec.c * t];
        for c in 0..3 {
            let noise: f64 =
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            values[(r, c)] = base[c] + spec.noise_sigma * noise;
        }
    }
    Dataset::from_matrix(values)
}

/// i.i.d. draws from the standard logistic density (1/4) sech^2(x/2) via the
/// inverse CDF x = log(u / (1 - u)).
pub fn sample_logistic_sources(n: usize, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || m == 0 {
        return Err(VbError::InvalidParameter(
            "need n >= 1 and m >= 1 sources".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DMatrix::from_fn(n, m, |_, _| {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        (u / (1.0 - u)).ln()
    }))
}

/// Mix sources through a random unit-column mixing matrix and add sensor
/// noise at the requested SNR.
///
/// SNR is defined per sensor on average power: noise variance on sensor i is
/// `mean((A x)_i^2) / 10^(snr_db/10)`. Pass `snr_db = +inf` for exactly
/// noise-free observations.
pub fn mix_sources(
    sources: &DMatrix<f64>,
    d: usize,
    snr_db: f64,
    seed: u64,
) -> Result<(Dataset, DMatrix<f64>, DVector<f64>)> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(VbError::InvalidParameter(format!(
            "snr_db must be a real number or +inf, got {snr_db}"
        )));
    }
    if d == 0 || sources.ncols() == 0 || sources.nrows() == 0 {
        return Err(VbError::InvalidParameter(
            "need d >= 1 sensors and a nonempty source matrix".into(),
        ));
    }
    let n = sources.nrows();
    let m = sources.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mixing = DMatrix::from_fn(d, m, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    for j in 0..m {
        let norm = mixing.column(j).norm();
        for i in 0..d {
            mixing[(i, j)] /= norm;
        }
    }

    let clean = sources * mixing.transpose(); // n x d
    let mut noise_vars = DVector::zeros(d);
    let mut values = clean.clone();
    if snr_db.is_finite() {
        let factor = 10f64.powf(snr_db / 10.0);
        for i in 0..d {
            let power = clean.column(i).map(|v| v * v).sum() / n as f64;
            noise_vars[i] = power / factor;
        }
        for r in 0..n {
            for i in 0..d {
                let z: f64 =
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                values[(r, i)] += noise_vars[i].sqrt() * z;
            }
        }
    }
    Ok((Dataset::from_matrix(values)?, mixing, noise_vars))
}

/// Noisy linear mixture scenario: logistic sources through a random
/// unit-column mixing matrix at a fixed per-sensor SNR.
#[derive(Debug, Clone)]
pub struct BssMixSpec {
    pub seed: u64,
    pub n: usize,
    pub sensors: usize,
    pub sources: usize,
    pub snr_db: f64,
}

/// One synthetic-dataset description; everything deterministic given the
/// embedded seed.
#[derive(Debug, Clone)]
pub enum GeneratorSpec {
    Gmm(GmmGenSpec),
    Spiral(SpiralGenSpec),
    BssMix(BssMixSpec),
}

/// Generated dataset plus whatever ground truth the generator has.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: Dataset,
    pub labels: Option<Vec<usize>>,
    pub sources: Option<DMatrix<f64>>,
    pub mixing: Option<DMatrix<f64>>,
    pub noise_vars: Option<DVector<f64>>,
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<GeneratedData> {
        match self {
            GeneratorSpec::Gmm(spec) => {
                let (dataset, labels) = sample_gmm(spec)?;
                Ok(GeneratedData {
                    dataset,
                    labels: Some(labels),
                    sources: None,
                    mixing: None,
                    noise_vars: None,
                })
            }
            GeneratorSpec::Spiral(spec) => Ok(GeneratedData {
                dataset: sample_spiral(spec)?,
                labels: None,
                sources: None,
                mixing: None,
                noise_vars: None,
            }),
            GeneratorSpec::BssMix(spec) => {
                let sources = sample_logistic_sources(spec.n, spec.sources, spec.seed)?;
                // the mixing/noise stream is derived from the same seed
                let (dataset, mixing, noise_vars) =
                    mix_sources(&sources, spec.sensors, spec.snr_db, spec.seed.wrapping_add(1))?;
                Ok(GeneratedData {
                    dataset,
                    labels: None,
                    sources: Some(sources),
                    mixing: Some(mixing),
                    noise_vars: Some(noise_vars),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_component_labels_are_zero() {
        let spec = GmmGenSpec {
            seed: 1,
            n: 50,
            weights: vec![1.0],
            means: vec![DVector::from_column_slice(&[2.0])],
            covariances: vec![DMatrix::from_element(1, 1, 1.0)],
        };
        let (_, labels) = sample_gmm(&spec).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn component_means_within_clt_band() {
        let spec = GmmGenSpec::well_separated_triple(42, 3000);
        let (data, labels) = sample_gmm(&spec).unwrap();
        for s in 0..3 {
            let rows: Vec<usize> = (0..data.len()).filter(|&r| labels[r] == s).collect();
            let ns = rows.len() as f64;
            for c in 0..2 {
                let mean: f64 =
                    rows.iter().map(|&r| data.values()[(r, c)]).sum::<f64>() / ns;
                let sigma = spec.covariances[s][(c, c)].sqrt();
                assert!(
                    (mean - spec.means[s][c]).abs() <= 4.0 * sigma / ns.sqrt(),
                    "component {s} axis {c}: {mean} vs {}",
                    spec.means[s][c]
                );
            }
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = GmmGenSpec::well_separated_triple(7, 100);
        let (a, la) = sample_gmm(&spec).unwrap();
        let (b, lb) = sample_gmm(&spec).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(la, lb);

        let s1 = sample_spiral(&SpiralGenSpec::default()).unwrap();
        let s2 = sample_spiral(&SpiralGenSpec::default()).unwrap();
        assert_eq!(s1.to_csv_string(), s2.to_csv_string());

        let x1 = sample_logistic_sources(64, 3, 9).unwrap();
        let x2 = sample_logistic_sources(64, 3, 9).unwrap();
        assert_eq!(x1, x2);

        let (m1, a1, v1) = mix_sources(&x1, 5, 15.0, 3).unwrap();
        let (m2, a2, v2) = mix_sources(&x1, 5, 15.0, 3).unwrap();
        assert_eq!(m1.to_csv_string(), m2.to_csv_string());
        assert_eq!(a1, a2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn noiseless_spiral_lies_on_the_manifold() {
        let spec = SpiralGenSpec {
            noise_sigma: 0.0,
            n: 200,
            ..SpiralGenSpec::default()
        };
        let data = sample_spiral(&spec).unwrap();
        for r in 0..data.len() {
            let (x, y, z) = (
                data.values()[(r, 0)],
                data.values()[(r, 1)],
                data.values()[(r, 2)],
            );
            assert_abs_diff_eq!(x * x + y * y, (z / spec.c).powi(2), epsilon = 1e-10);
        }
    }

    #[test]
    fn default_spiral_has_800_points() {
        let data = sample_spiral(&SpiralGenSpec::default()).unwrap();
        assert_eq!(data.len(), 800);
        assert_eq!(data.dim(), 3);
    }

    #[test]
    fn spiral_orthogonal_deviation_tracks_noise() {
        let sigma = 0.05;
        let spec = SpiralGenSpec {
            seed: 5,
            n: 4000,
            noise_sigma: sigma,
            ..SpiralGenSpec::default()
        };
        let data = sample_spiral(&spec).unwrap();
        // distance to a densely sampled version of the noise-free curve
        let curve: Vec<DVector<f64>> = (0..20_000)
            .map(|k| {
                let t = spec.t_min
                    + (spec.t_max - spec.t_min) * (k as f64 + 0.5) / 20_000.0;
                DVector::from_column_slice(&[t * t.cos(), t * t.sin(), spec.c * t])
            })
            .collect();
        let mut mean_sq = 0.0;
        for r in 0..data.len() {
            let p = data.row(r);
            let d2 = curve
                .iter()
                .map(|q| (&p - q).norm_squared())
                .fold(f64::INFINITY, f64::min);
            mean_sq += d2 / data.len() as f64;
        }
        // two directions orthogonal to the curve contribute ~sigma^2 each
        assert!(
            (mean_sq - 2.0 * sigma * sigma).abs() < 0.1 * 2.0 * sigma * sigma,
            "mean squared orthogonal deviation {mean_sq}"
        );
    }

    #[test]
    fn logistic_moments() {
        let x = sample_logistic_sources(100_000, 1, 12).unwrap();
        let mut v: Vec<f64> = x.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = v[v.len() / 2];
        assert!(median.abs() < 0.05, "median {median}");

        let n = v.len() as f64;
        let mean: f64 = v.iter().sum::<f64>() / n;
        let var: f64 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let pi2_3 = std::f64::consts::PI.powi(2) / 3.0;
        assert!((var - pi2_3).abs() < 0.1, "variance {var} vs {pi2_3}");

        let m4: f64 = v.iter().map(|a| (a - mean).powi(4)).sum::<f64>() / n;
        let kurtosis_excess = m4 / (var * var) - 3.0;
        assert!(
            (kurtosis_excess - 1.2).abs() < 0.2,
            "kurtosis excess {kurtosis_excess}"
        );
    }

    #[test]
    fn infinite_snr_is_exact_mixing() {
        let x = sample_logistic_sources(128, 2, 3).unwrap();
        let (data, mixing, noise_vars) = mix_sources(&x, 4, f64::INFINITY, 1).unwrap();
        let clean = &x * mixing.transpose();
        assert_eq!(data.values(), &clean);
        assert!(noise_vars.iter().all(|&v| v == 0.0));
        for j in 0..2 {
            assert_abs_diff_eq!(mixing.column(j).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn measured_snr_matches_requested() {
        let x = sample_logistic_sources(10_000, 5, 6).unwrap();
        let (data, mixing, _) = mix_sources(&x, 11, 20.0, 2).unwrap();
        assert_eq!(data.dim(), 11);
        assert_eq!(mixing.shape(), (11, 5));
        let clean = &x * mixing.transpose();
        let noise = data.values() - &clean;
        for i in 0..11 {
            let sp = clean.column(i).map(|v| v * v).sum() / 10_000.0;
            let np = noise.column(i).map(|v| v * v).sum() / 10_000.0;
            let snr = 10.0 * (sp / np).log10();
            assert!((snr - 20.0).abs() < 0.5, "sensor {i}: {snr} dB");
        }
    }

    #[test]
    fn rejects_nan_snr() {
        let x = sample_logistic_sources(16, 2, 3).unwrap();
        assert!(mix_sources(&x, 3, f64::NAN, 0).is_err());
    }
}
