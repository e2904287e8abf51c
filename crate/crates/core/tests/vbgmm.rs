//! Mixture-engine behavior: transcription oracles for the published E/M
//! rules, pruning, convergence, the reference-EM large-sample check, and the
//! conjugate-model evidence bound.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use varbayes::dataset::Dataset;
use varbayes::datagen::{sample_gmm, GmmGenSpec};
use varbayes::ensemble::map_structure;
use varbayes::vbgmm::{
    self, classify_stats, e_step, fit, fit_all, m_step, prune, GmmConfig, GmmInit, GmmPriors,
    GmmSuffStats, GmmVarState, MeanPrecisionCoupling, Responsibilities,
};

fn dataset_1d(values: &[f64]) -> Dataset {
    Dataset::from_matrix(DMatrix::from_column_slice(values.len(), 1, values)).unwrap()
}

fn uniform_resp(n: usize, m: usize) -> Responsibilities {
    Responsibilities::new(
        DMatrix::from_element(n, m, 1.0 / m as f64),
        DVector::zeros(n),
    )
    .unwrap()
}

fn stats_1d(pis: &[f64], mus: &[f64], gammas: &[f64]) -> GmmSuffStats {
    GmmSuffStats::new(
        DVector::from_column_slice(pis),
        mus.iter()
            .map(|&m| DVector::from_element(1, m))
            .collect(),
        gammas
            .iter()
            .map(|&g| DMatrix::from_element(1, 1, g))
            .collect(),
        vec![true; pis.len()],
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// E-step

#[test]
fn e_step_single_component_is_degenerate() {
    let data = dataset_1d(&[0.0, 1.0, -3.0, 2.5]);
    let stats = stats_1d(&[1.0], &[0.4], &[1.3]);
    let resp = e_step(&data, &stats, 4).unwrap();
    for r in 0..4 {
        assert_eq!(resp.matrix()[(r, 0)], 1.0);
    }
}

#[test]
fn e_step_symmetric_components_split_evenly() {
    let data = dataset_1d(&[0.0]);
    let stats = stats_1d(&[0.5, 0.5], &[-2.0, 2.0], &[1.0, 1.0]);
    let resp = e_step(&data, &stats, 100).unwrap();
    assert!((resp.matrix()[(0, 0)] - 0.5).abs() < 1e-12);
    assert!((resp.matrix()[(0, 1)] - 0.5).abs() < 1e-12);
}

/// Independent transcription of the E-step weight formula, using the AS 103
/// digamma from statrs and scalar arithmetic only.
fn e_step_oracle_1d(
    data: &[f64],
    pis: &[f64],
    mus: &[f64],
    gammas: &[f64],
    n_total: usize,
) -> Vec<Vec<f64>> {
    use statrs::function::gamma::digamma as psi;
    let n = n_total as f64;
    let m = pis.len();
    let lambda_total: f64 = pis.iter().map(|p| n * p + 1.0).sum();
    let mut weights = Vec::new();
    for &y in data {
        let mut row = Vec::with_capacity(m);
        for s in 0..m {
            let n_pi = n * pis[s];
            let pi_tilde = (psi(n_pi + 1.0) - psi(lambda_total)).exp();
            let a = n_pi / 2.0;
            let b = a / gammas[s];
            let gamma_tilde = (1.0 / b) * psi(a).exp();
            let w = pi_tilde
                * (gamma_tilde / (2.0 * std::f64::consts::PI)).sqrt()
                * (-0.5 * gammas[s] * (y - mus[s]).powi(2)).exp()
                * (-1.0 / (2.0 * n_pi)).exp();
            row.push(w);
        }
        let z: f64 = row.iter().sum();
        for w in &mut row {
            *w /= z;
        }
        weights.push(row);
    }
    weights
}

#[test]
fn e_step_matches_direct_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..10 {
        let values: Vec<f64> = (0..10).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let data = dataset_1d(&values);
        let w: f64 = rng.gen_range(0.2..0.8);
        let pis = [w, 1.0 - w];
        let mus = [rng.gen_range(-2.0..0.0), rng.gen_range(0.0..2.0)];
        let gammas = [rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)];
        let stats = stats_1d(&pis, &mus, &gammas);
        let n_total = 50;

        let resp = e_step(&data, &stats, n_total).unwrap();
        let oracle = e_step_oracle_1d(&values, &pis, &mus, &gammas, n_total);
        for r in 0..values.len() {
            for s in 0..2 {
                assert!(
                    (resp.matrix()[(r, s)] - oracle[r][s]).abs() < 1e-10,
                    "mismatch at ({r},{s}): {} vs {}",
                    resp.matrix()[(r, s)],
                    oracle[r][s]
                );
            }
        }
    }
}

#[test]
fn e_step_rejects_fully_pruned_stats() {
    let data = dataset_1d(&[0.0]);
    let mut stats = stats_1d(&[1.0], &[0.0], &[1.0]);
    stats.alive[0] = false;
    stats.pi_bar[0] = 0.0;
    assert!(matches!(
        e_step(&data, &stats, 10),
        Err(varbayes::VbError::ModelCollapse)
    ));
}

// ---------------------------------------------------------------------------
// M-step

#[test]
fn m_step_hand_computed_case() {
    // Four points {-1,-1,1,1} with uniform responsibility on one component:
    // pi = 1, mu = 0, scatter per unit weight 1, precision (1 - 1/4) * 1 = 0.75.
    let data = dataset_1d(&[-1.0, -1.0, 1.0, 1.0]);
    let stats = m_step(&data, &uniform_resp(4, 1)).unwrap();
    assert!((stats.pi_bar[0] - 1.0).abs() < 1e-14);
    assert!(stats.mu_bar[0][0].abs() < 1e-14);
    assert!((stats.gamma_bar[0][(0, 0)] - 0.75).abs() < 1e-12);
}

#[test]
fn m_step_degenerate_responsibilities() {
    let data = dataset_1d(&[1.0, 2.0, 3.0, 6.0]);
    let mut matrix = DMatrix::zeros(4, 2);
    for r in 0..4 {
        matrix[(r, 0)] = 1.0;
    }
    let resp = Responsibilities::new(matrix, DVector::zeros(4)).unwrap();
    let stats = m_step(&data, &resp).unwrap();
    assert!((stats.pi_bar[0] - 1.0).abs() < 1e-14);
    assert_eq!(stats.pi_bar[1], 0.0);
    assert!(!stats.alive[1]);
    assert!((stats.mu_bar[0][0] - 3.0).abs() < 1e-12);
}

/// Direct transcription of the M-step formulas for random instances.
#[test]
fn m_step_matches_direct_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..10 {
        let n = 12;
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let data = dataset_1d(&values);
        let mut matrix = DMatrix::zeros(n, 2);
        for r in 0..n {
            let p: f64 = rng.gen_range(0.05..0.95);
            matrix[(r, 0)] = p;
            matrix[(r, 1)] = 1.0 - p;
        }
        let resp = Responsibilities::new(matrix.clone(), DVector::zeros(n)).unwrap();
        let stats = m_step(&data, &resp).unwrap();

        for s in 0..2 {
            let n_s: f64 = (0..n).map(|r| matrix[(r, s)]).sum();
            let pi = n_s / n as f64;
            let mu: f64 = (0..n).map(|r| matrix[(r, s)] * values[r]).sum::<f64>() / n_s;
            let scatter: f64 = (0..n)
                .map(|r| matrix[(r, s)] * (values[r] - mu).powi(2))
                .sum::<f64>()
                / n as f64;
            let gamma = (1.0 - 1.0 / n_s) * (scatter / pi).recip();
            assert!((stats.pi_bar[s] - pi).abs() < 1e-12);
            assert!((stats.mu_bar[s][0] - mu).abs() < 1e-10);
            assert!(
                (stats.gamma_bar[s][(0, 0)] - gamma).abs() < 1e-10 * gamma.abs(),
                "gamma mismatch: {} vs {gamma}",
                stats.gamma_bar[s][(0, 0)]
            );
        }
    }
}

#[test]
fn m_step_recovers_separated_cluster_means() {
    let spec = GmmGenSpec::well_separated_triple(5, 2400);
    let (data, _) = sample_gmm(&spec).unwrap();
    let stats0 = GmmSuffStats::new(
        DVector::from_element(3, 1.0 / 3.0),
        spec.means.clone(),
        spec.covariances
            .iter()
            .map(|c| c.clone().try_inverse().unwrap())
            .collect(),
        vec![true; 3],
    )
    .unwrap();
    let resp = e_step(&data, &stats0, data.len()).unwrap();
    let stats = m_step(&data, &resp).unwrap();
    for s in 0..3 {
        let err = (&stats.mu_bar[s] - &spec.means[s]).norm();
        assert!(err < 0.1, "component {s} mean off by {err}");
    }
}

// ---------------------------------------------------------------------------
// Pruning

#[test]
fn prune_kills_threshold_component() {
    let n_total = 100;
    let eps = 1.0 / (2.0 * n_total as f64);
    let stats = stats_1d(&[0.5, 0.5 - eps, eps], &[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]);
    let mut matrix = DMatrix::zeros(4, 3);
    for r in 0..4 {
        matrix[(r, 0)] = 0.5;
        matrix[(r, 1)] = 0.5 - eps;
        matrix[(r, 2)] = eps;
    }
    let resp = Responsibilities::new(matrix, DVector::zeros(4)).unwrap();
    let (pruned, new_resp) = prune(&stats, &resp, n_total).unwrap();
    assert!(!pruned.alive[2]);
    assert!(pruned.alive[0] && pruned.alive[1]);
    let total: f64 = pruned.pi_bar.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for r in 0..4 {
        assert_eq!(new_resp.matrix()[(r, 2)], 0.0);
        let row: f64 = new_resp.matrix().row(r).iter().sum();
        assert!((row - 1.0).abs() < 1e-12);
    }
}

#[test]
fn prune_is_a_no_op_above_threshold() {
    let stats = stats_1d(&[0.6, 0.4], &[0.0, 1.0], &[1.0, 1.0]);
    let resp = uniform_resp(5, 2);
    let (pruned, new_resp) = prune(&stats, &resp, 100).unwrap();
    assert!(pruned.alive.iter().all(|&a| a));
    assert_eq!(new_resp.matrix(), resp.matrix());
}

#[test]
fn prune_refuses_to_kill_everything() {
    let stats = stats_1d(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]);
    let resp = uniform_resp(2, 2);
    // N = 2 puts both components at pi = 1/N
    assert!(matches!(
        prune(&stats, &resp, 2),
        Err(varbayes::VbError::ModelCollapse)
    ));
}

#[test]
fn single_point_lock_is_pruned_with_finite_free_energy() {
    // One component locked on a single outlier: pi = 1/N exactly.
    let n = 10usize;
    let mut values: Vec<f64> = (0..n - 1).map(|i| i as f64 * 0.1).collect();
    values.push(50.0);
    let data = dataset_1d(&values);
    let mut matrix = DMatrix::zeros(n, 2);
    for r in 0..n - 1 {
        matrix[(r, 0)] = 1.0;
    }
    matrix[(n - 1, 1)] = 1.0;
    let resp = Responsibilities::new(matrix, DVector::zeros(n)).unwrap();
    let stats = m_step(&data, &resp).unwrap();
    // the locked component is already declared dead by the M-step
    assert!(!stats.alive[1]);
    let (pruned, new_resp) = prune(&stats, &resp, n).unwrap();
    assert!(!pruned.alive[1]);
    let priors = GmmPriors::from_data(&data, 1e-3).unwrap();
    let report = vbgmm::free_energy(&data, &pruned, &new_resp, &priors).unwrap();
    assert!(report.total.is_finite());
}

// ---------------------------------------------------------------------------
// Free energy

#[test]
fn kl_term_vanishes_at_prior_state() {
    let data = dataset_1d(&[0.4, -0.2, 1.0, 0.1, -0.6]);
    let mut priors = GmmPriors::from_data(&data, 1e-3).unwrap();
    priors.coupling = MeanPrecisionCoupling::Factorized;
    let state = GmmVarState::prior_state(&priors, 3).unwrap();
    let report =
        vbgmm::free_energy_state(&data, &state, &uniform_resp(5, 3), &priors).unwrap();
    assert!(
        report.kl_term.abs() < 1e-10,
        "KL at the prior is {}",
        report.kl_term
    );
}

/// Closed-form log marginal likelihood of the 1-D conjugate single-Gaussian
/// model with Normal-Gamma prior (shape a0, rate b0, location xi0, scale k0).
fn normal_gamma_log_evidence(y: &[f64], a0: f64, b0: f64, xi0: f64, k0: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let ss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let kn = k0 + n;
    let an = a0 + n / 2.0;
    let bn = b0 + 0.5 * ss + k0 * n * (ybar - xi0).powi(2) / (2.0 * kn);
    ln_gamma(an) - ln_gamma(a0) + a0 * b0.ln() - an * bn.ln()
        + 0.5 * (k0 / kn).ln()
        - n / 2.0 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn free_energy_is_below_conjugate_evidence_and_gap_shrinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let sample: Vec<f64> = (0..200)
        .map(|_| {
            2.0 + 1.5
                * <rand_distr::StandardNormal as rand_distr::Distribution<f64>>::sample(
                    &rand_distr::StandardNormal,
                    &mut rng,
                )
        })
        .collect();

    let mut gaps = Vec::new();
    for &n in &[20usize, 200] {
        let data = dataset_1d(&sample[..n]);
        let priors = GmmPriors::from_data(&data, 1e-3).unwrap();
        let config = GmmConfig {
            priors: Some(priors.clone()),
            tol: 1e-12,
            ..GmmConfig::default()
        };
        let model = fit(&data, 1, &config).unwrap();
        let evidence = normal_gamma_log_evidence(
            &sample[..n],
            priors.a0,
            priors.b0[(0, 0)],
            priors.xi0[0],
            priors.beta0,
        );
        assert!(
            model.report.total <= evidence + 1e-9,
            "N={n}: F {} exceeds evidence {evidence}",
            model.report.total
        );
        gaps.push(evidence - model.report.total);
    }
    assert!(
        gaps[1] < gaps[0],
        "gap did not shrink: {} vs {}",
        gaps[0],
        gaps[1]
    );
}

#[test]
fn duplicating_the_dataset_roughly_doubles_free_energy() {
    let spec = GmmGenSpec::well_separated_triple(3, 150);
    let (data, _) = sample_gmm(&spec).unwrap();
    let doubled = {
        let mut values = DMatrix::zeros(300, 2);
        values.rows_mut(0, 150).copy_from(data.values());
        values.rows_mut(150, 150).copy_from(data.values());
        Dataset::from_matrix(values).unwrap()
    };
    let config = GmmConfig::default();
    let f1 = fit(&data, 3, &config).unwrap().report.total;
    let f2 = fit(&doubled, 3, &config).unwrap().report.total;
    let ratio = f2 / f1;
    assert!(
        (1.5..=2.5).contains(&ratio),
        "F(2N)/F(N) = {ratio} outside [1.5, 2.5]"
    );
}

// ---------------------------------------------------------------------------
// Fit behavior

#[test]
fn single_component_mean_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mu, sigma, n) = (1.7, 0.8, 400usize);
    let values: Vec<f64> = (0..n)
        .map(|_| {
            mu + sigma
                * <rand_distr::StandardNormal as rand_distr::Distribution<f64>>::sample(
                    &rand_distr::StandardNormal,
                    &mut rng,
                )
        })
        .collect();
    let data = dataset_1d(&values);
    let model = fit(&data, 1, &GmmConfig::default()).unwrap();
    let err = (model.stats.mu_bar[0][0] - mu).abs();
    assert!(
        err <= 3.0 * sigma / (n as f64).sqrt(),
        "posterior mean off by {err}"
    );
}

#[test]
fn overcomplete_fit_prunes_weak_components() {
    // Components only die when their soft count decays below one instance;
    // a pair stably splitting one cluster survives. With this seed one of
    // the five starves and is pruned, and the structure sweep still selects
    // three components by free energy.
    let (data, _) = sample_gmm(&GmmGenSpec::well_separated_triple(11, 600)).unwrap();
    let config = GmmConfig {
        seed: 0,
        ..GmmConfig::default()
    };
    let model = fit(&data, 5, &config).unwrap();
    assert!(model.alive_count() <= 5);
    assert!(model.alive_count() < 5, "no component was pruned");

    let sweep = fit_all(&data, 5, &config).unwrap();
    assert_eq!(map_structure(&sweep.posterior).unwrap(), 3);
}

#[test]
fn fit_is_bit_identical_across_runs() {
    let (data, _) = sample_gmm(&GmmGenSpec::well_separated_triple(9, 300)).unwrap();
    let config = GmmConfig {
        seed: 4,
        ..GmmConfig::default()
    };
    let a = fit(&data, 4, &config).unwrap();
    let b = fit(&data, 4, &config).unwrap();
    assert_eq!(a.report.total.to_bits(), b.report.total.to_bits());
    for s in 0..4 {
        assert_eq!(a.stats.pi_bar[s].to_bits(), b.stats.pi_bar[s].to_bits());
        for c in 0..2 {
            assert_eq!(
                a.stats.mu_bar[s][c].to_bits(),
                b.stats.mu_bar[s][c].to_bits()
            );
        }
    }
}

#[test]
fn free_energy_trace_is_monotone_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..12 {
        let d = rng.gen_range(1..3usize);
        let k = rng.gen_range(1..4usize);
        let n = rng.gen_range(60..160usize);
        let spec = random_mixture_spec(&mut rng, d, k, n);
        let (data, _) = sample_gmm(&spec).unwrap();
        let m = k + rng.gen_range(0..2usize);
        let config = GmmConfig {
            seed: trial as u64,
            ..GmmConfig::default()
        };
        let model = fit(&data, m.max(1), &config).unwrap();
        assert!(
            model.report.monotonicity_violation().is_none(),
            "trial {trial}: monotonicity violated"
        );
    }
}

fn random_mixture_spec(rng: &mut ChaCha8Rng, d: usize, k: usize, n: usize) -> GmmGenSpec {
    let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..2.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let means = (0..k)
        .map(|j| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0) + 6.0 * j as f64))
        .collect();
    let covariances = (0..k)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.5..0.5));
            &a * a.transpose() + DMatrix::identity(d, d) * rng.gen_range(0.3..1.0)
        })
        .collect();
    GmmGenSpec {
        seed: rng.gen(),
        n,
        weights,
        means,
        covariances,
    }
}

#[test]
fn permuting_initial_components_permutes_the_result() {
    let (data, _) = sample_gmm(&GmmGenSpec::well_separated_triple(21, 240)).unwrap();
    let seeds = vbgmm::kmeans_plus_plus_seeds(&data, 3, 5).unwrap();
    let precision = data.covariance().try_inverse().unwrap();

    let forward = GmmInit::Explicit {
        weights: vec![0.5, 0.3, 0.2],
        means: seeds.clone(),
        precisions: vec![precision.clone(); 3],
    };
    let swapped = GmmInit::Explicit {
        weights: vec![0.2, 0.3, 0.5],
        means: vec![seeds[2].clone(), seeds[1].clone(), seeds[0].clone()],
        precisions: vec![precision; 3],
    };
    let config_a = GmmConfig {
        init: forward,
        ..GmmConfig::default()
    };
    let config_b = GmmConfig {
        init: swapped,
        ..GmmConfig::default()
    };
    let a = fit(&data, 3, &config_a).unwrap();
    let b = fit(&data, 3, &config_b).unwrap();
    // identical up to float reassociation of the per-component sums
    let f_rel = (a.report.total - b.report.total).abs() / (1.0 + a.report.total.abs());
    assert!(f_rel < 1e-12, "free energies differ by {f_rel}");
    for s in 0..3 {
        let t = 2 - s;
        assert_eq!(a.stats.alive[s], b.stats.alive[t]);
        let diff = (&a.stats.mu_bar[s] - &b.stats.mu_bar[t]).norm();
        assert!(diff < 1e-10, "component {s} vs {t}: |mu diff| = {diff}");
    }
}

#[test]
fn duplicate_points_and_many_components_stay_finite() {
    // data with an exact duplicate pair, several isolated single points, and
    // m = N/2 initial components: the infinite-likelihood failure of plain EM
    // must not occur, and single-point components must get pruned.
    let values = vec![
        0.0, 0.0, 10.0, 10.1, 20.0, 20.1, 35.0, 50.0, 65.0, 80.0, 95.0, 110.0,
    ];
    let data = dataset_1d(&values);
    let model = fit(&data, 6, &GmmConfig::default()).unwrap();
    assert!(model.report.total.is_finite());
    assert!(model.alive_count() < 6, "pruning never triggered");
}

#[test]
fn posterior_mean_covariance_scales_inversely_with_n() {
    let (data, _) = sample_gmm(&GmmGenSpec::well_separated_triple(31, 200)).unwrap();
    let doubled = {
        let mut values = DMatrix::zeros(400, 2);
        values.rows_mut(0, 200).copy_from(data.values());
        values.rows_mut(200, 200).copy_from(data.values());
        Dataset::from_matrix(values).unwrap()
    };
    let config = GmmConfig::default();
    let small = fit(&data, 3, &config).unwrap();
    let big = fit(&doubled, 3, &config).unwrap();

    // match components of the two fits by nearest means
    for s in 0..3 {
        let mut best = (0usize, f64::INFINITY);
        for t in 0..3 {
            let d = (&small.stats.mu_bar[s] - &big.stats.mu_bar[t]).norm();
            if d < best.1 {
                best = (t, d);
            }
        }
        let t = best.0;
        // Eq-18-style mean-posterior covariance trace: tr((N pi Gamma)^-1)
        let cov_small = (&small.stats.gamma_bar[s] * (200.0 * small.stats.pi_bar[s]))
            .try_inverse()
            .unwrap()
            .trace();
        let cov_big = (&big.stats.gamma_bar[t] * (400.0 * big.stats.pi_bar[t]))
            .try_inverse()
            .unwrap()
            .trace();
        let ratio = cov_small / cov_big;
        assert!(
            (ratio - 2.0).abs() < 0.2,
            "component {s}: covariance ratio {ratio}"
        );
    }
}

// ---------------------------------------------------------------------------
// Reference EM equivalence (large sample)

/// Plain maximum-likelihood EM for a Gaussian mixture, for the large-sample
/// comparison. Full covariances, log-space responsibilities.
struct EmFit {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    precisions: Vec<DMatrix<f64>>,
}

fn reference_em(
    data: &Dataset,
    init_means: &[DVector<f64>],
    init_cov: &DMatrix<f64>,
    max_iter: usize,
) -> EmFit {
    let n = data.len();
    let d = data.dim();
    let m = init_means.len();
    let mut weights = vec![1.0 / m as f64; m];
    let mut means: Vec<DVector<f64>> = init_means.to_vec();
    let mut covs: Vec<DMatrix<f64>> = vec![init_cov.clone(); m];
    let mut last_ll = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        // E-step
        let mut resp = DMatrix::zeros(n, m);
        let mut ll = 0.0;
        for r in 0..n {
            let y = data.row(r);
            let mut logs = vec![0.0; m];
            for s in 0..m {
                let prec = covs[s].clone().try_inverse().unwrap();
                let logdet = covs[s].determinant().ln();
                let diff = &y - &means[s];
                logs[s] = weights[s].ln()
                    - 0.5
                        * (d as f64 * (2.0 * std::f64::consts::PI).ln()
                            + logdet
                            + (&prec * &diff).dot(&diff));
            }
            let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
            for s in 0..m {
                resp[(r, s)] = ((logs[s] - mx).exp()) / z;
            }
            ll += mx + z.ln();
        }
        // M-step
        for s in 0..m {
            let n_s: f64 = (0..n).map(|r| resp[(r, s)]).sum();
            weights[s] = n_s / n as f64;
            let mut mu = DVector::zeros(d);
            for r in 0..n {
                mu += data.row(r) * resp[(r, s)];
            }
            mu /= n_s;
            let mut cov = DMatrix::zeros(d, d);
            for r in 0..n {
                let c = data.row(r) - &mu;
                cov += &c * c.transpose() * resp[(r, s)];
            }
            cov /= n_s;
            for i in 0..d {
                cov[(i, i)] += 1e-10;
            }
            means[s] = mu;
            covs[s] = cov;
        }
        if (ll - last_ll).abs() <= 1e-11 * (1.0 + ll.abs()) {
            break;
        }
        last_ll = ll;
    }
    EmFit {
        weights,
        means,
        precisions: covs.iter().map(|c| c.clone().try_inverse().unwrap()).collect(),
    }
}

#[test]
fn large_sample_limit_recovers_ordinary_em() {
    let spec = GmmGenSpec {
        seed: 8,
        n: 10_000,
        weights: vec![0.4, 0.6],
        means: vec![
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[5.0, 4.0]),
        ],
        covariances: vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.7, -0.1, -0.1, 1.1]),
        ],
    };
    let (data, _) = sample_gmm(&spec).unwrap();
    let seeds = vbgmm::kmeans_plus_plus_seeds(&data, 2, 1).unwrap();
    let global_cov = data.covariance();

    let config = GmmConfig {
        init: GmmInit::Explicit {
            weights: vec![0.5, 0.5],
            means: seeds.clone(),
            precisions: vec![global_cov.clone().try_inverse().unwrap(); 2],
        },
        tol: 1e-11,
        ..GmmConfig::default()
    };
    let vb = fit(&data, 2, &config).unwrap();
    let em = reference_em(&data, &seeds, &global_cov, 2000);

    for s in 0..2 {
        // align by nearest mean
        let mut t_best = (0usize, f64::INFINITY);
        for t in 0..2 {
            let dist = (&vb.stats.mu_bar[s] - &em.means[t]).norm();
            if dist < t_best.1 {
                t_best = (t, dist);
            }
        }
        let t = t_best.0;
        let w_rel = (vb.stats.pi_bar[s] - em.weights[t]).abs() / em.weights[t];
        assert!(w_rel < 1e-2, "weight {s}: relative error {w_rel}");
        for c in 0..2 {
            let rel = (vb.stats.mu_bar[s][c] - em.means[t][c]).abs()
                / (1.0 + em.means[t][c].abs());
            assert!(rel < 1e-2, "mean {s}[{c}]: relative error {rel}");
        }
        let gamma_rel = (&vb.stats.gamma_bar[s] - &em.precisions[t]).norm()
            / em.precisions[t].norm();
        assert!(gamma_rel < 1e-2, "precision {s}: relative error {gamma_rel}");
    }
}

// ---------------------------------------------------------------------------
// Classification and structure sweep

#[test]
fn classify_center_and_tie_cases() {
    let stats = stats_1d(&[0.5, 0.5], &[-2.0, 2.0], &[1.0, 1.0]);
    assert_eq!(
        classify_stats(&stats, 100, &DVector::from_element(1, -2.0)).unwrap(),
        0
    );
    assert_eq!(
        classify_stats(&stats, 100, &DVector::from_element(1, 2.0)).unwrap(),
        1
    );
    // exact tie at the midpoint goes to the lower index
    assert_eq!(
        classify_stats(&stats, 100, &DVector::from_element(1, 0.0)).unwrap(),
        0
    );
}

#[test]
fn classify_matches_brute_force_weights() {
    use statrs::function::gamma::digamma as psi;
    let stats = stats_1d(&[0.3, 0.7], &[-1.0, 1.5], &[2.0, 0.5]);
    let n_total = 80;
    let n = n_total as f64;
    let lambda_total = n + 2.0;
    for &y in &[-3.0, -0.4, 0.2, 2.2] {
        let mut weights = Vec::new();
        for s in 0..2 {
            let n_pi = n * stats.pi_bar[s];
            let pi_tilde = (psi(n_pi + 1.0) - psi(lambda_total)).exp();
            let a = n_pi / 2.0;
            let b = a / stats.gamma_bar[s][(0, 0)];
            let gamma_tilde = psi(a).exp() / b;
            let w = pi_tilde * gamma_tilde.sqrt()
                * (-0.5 * stats.gamma_bar[s][(0, 0)] * (y - stats.mu_bar[s][0]).powi(2)).exp()
                * (-1.0 / (2.0 * n_pi)).exp();
            weights.push(w);
        }
        let expected = if weights[1] > weights[0] { 1 } else { 0 };
        let got = classify_stats(&stats, n_total, &DVector::from_element(1, y)).unwrap();
        assert_eq!(got, expected, "at y = {y}");
    }
}

#[test]
fn sweep_with_one_structure_is_trivial() {
    let (data, _) = sample_gmm(&GmmGenSpec::well_separated_triple(2, 120)).unwrap();
    let sweep = fit_all(&data, 1, &GmmConfig::default()).unwrap();
    assert_eq!(map_structure(&sweep.posterior).unwrap(), 1);
    assert!((sweep.posterior.posterior_prob(1).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn two_point_dataset_concentrates_on_tiny_structures() {
    let data = dataset_1d(&[0.0, 5.0]);
    let sweep = fit_all(&data, 3, &GmmConfig::default()).unwrap();
    let p1 = sweep.posterior.posterior_prob(1).unwrap_or(0.0);
    let p2 = sweep.posterior.posterior_prob(2).unwrap_or(0.0);
    assert!(
        p1 + p2 > 0.99,
        "mass on m <= 2 is {} (warnings: {:?})",
        p1 + p2,
        sweep.warnings
    );
    let chosen = map_structure(&sweep.posterior).unwrap();
    assert!(chosen <= 2, "chosen structure {chosen}");
}
