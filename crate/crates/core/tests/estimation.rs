//! Fitting steps against brute-force oracles.

mod common;

use miph::estimation::{
    e_step, fit, i_step, log_lik_for_betas, m_step, observed_log_lik, per_observation_pi, r_step,
    transform_data, FitConfig, IStepOptions, RStepOptions, RStepStatus, StoppingRule, DEFAULT_RATE_FLOOR,
};
use miph::data::generate_synthetic;
use miph::{ObservationSet, RegressionCoefficients, Structure, SubIntensity};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute_force;

fn assert_rel(a: f64, b: f64, tol: f64, what: &str) {
    let scale = a.abs().max(b.abs());
    assert!(scale < 1e-300 || (a - b).abs() <= tol * scale, "{what}: {a} vs {b}");
}

fn check_single_row(delta: [bool; 2]) {
    let subs = vec![
        SubIntensity::new(array![[-2.0, 1.2, 0.3], [0.4, -1.5, 0.6], [0.0, 0.2, -0.9]]).unwrap(),
        SubIntensity::new(array![[-1.0, 0.7, 0.0], [0.0, -2.2, 1.5], [0.0, 0.0, -0.6]]).unwrap(),
    ];
    let pi = [0.2, 0.5, 0.3];
    let x = [0.8, 1.9];
    let stats = e_step(
        &array![[x[0], x[1]]],
        &Array2::from_shape_vec((1, 2), delta.to_vec()).unwrap(),
        &Array2::from_shape_vec((1, 3), pi.to_vec()).unwrap(),
        &subs,
    )
    .unwrap();
    let oracle = brute_force(&x, &delta, &pi, &subs);
    for k in 0..3 {
        assert_rel(stats.b[[0, k]], oracle.b[k], 1e-10, "b");
    }
    for i in 0..2 {
        for j in 0..3 {
            assert_rel(stats.z[[i, j]], oracle.z[i][j], 1e-9, "z");
            assert_rel(stats.n_exit[[i, j]], oracle.n_exit[i][j], 1e-10, "exit");
            for s in 0..3 {
                assert_rel(stats.n_trans[i][[j, s]], oracle.n_trans[i][[j, s]], 1e-9, "transitions");
            }
        }
    }
    // total occupation equals the observed time
    for i in 0..2 {
        assert!((stats.z.row(i).sum() - x[i]).abs() < 1e-12);
    }
}

#[test]
fn e_step_matches_quadrature_all_observed() {
    check_single_row([true, true]);
}

#[test]
fn e_step_matches_quadrature_with_censoring() {
    check_single_row([true, false]);
    check_single_row([false, false]);
}

#[test]
fn log_likelihood_matches_profile_products() {
    let m = common::small_model();
    let obs = generate_synthetic(&m, |_| vec![1.0], 0.3, 50, 4).unwrap();
    let pi = m.fixed_initial().unwrap().as_array().clone();
    let mut oracle = 0.0;
    for (y, d) in obs.times().outer_iter().zip(obs.indicators().outer_iter()) {
        let mut per_state = pi.clone();
        for i in 0..2 {
            let (surv, dens) = m.margins()[i].profiles(y[i]).unwrap();
            per_state = per_state * if d[i] { dens } else { surv };
        }
        oracle += per_state.sum().ln();
    }
    let ours = observed_log_lik(&obs, &m).unwrap();
    assert!((ours - oracle).abs() < 1e-10 * oracle.abs());
}

#[test]
fn m_step_keeps_structure_and_occupation_identity() {
    let m = common::small_model();
    let obs = generate_synthetic(&m, |_| vec![1.0], 0.2, 200, 8).unwrap();
    let x = transform_data(&obs, &m.betas()).unwrap();
    let pi = per_observation_pi(&m, obs.covariates()).unwrap();
    let subs: Vec<SubIntensity> = m.margins().iter().map(|g| g.sub.clone()).collect();
    let stats = e_step(&x, obs.indicators(), &pi, &subs).unwrap();
    let out = m_step(&stats, Structure::Coxian, DEFAULT_RATE_FLOOR).unwrap();
    for (i, sub) in out.subs.iter().enumerate() {
        assert!(sub.conforms_to(Structure::Coxian));
        for j in 0..3 {
            let outflow: f64 = (0..3).filter(|&s| s != j).map(|s| stats.n_trans[i][[j, s]]).sum::<f64>()
                + stats.n_exit[[i, j]];
            assert!((-sub.matrix()[[j, j]] - outflow / stats.z[[i, j]]).abs() < 1e-12);
        }
    }
}

#[test]
fn r_step_intercept_only_is_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = Array2::from_shape_fn((40, 3), |_| rng.random_range(0.0..2.0));
    let design = Array2::ones((40, 1));
    let out = r_step(&w, &design, &RegressionCoefficients::zeros(3, 1), RStepOptions::default()).unwrap();
    let total = w.sum();
    for k in 0..3 {
        assert!((out.pi[[0, k]] - w.column(k).sum() / total).abs() < 1e-10);
    }
    assert_eq!(out.status, RStepStatus::Converged);
}

#[test]
fn r_step_solves_score_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 120;
    let design = Array2::from_shape_fn((n, 3), |(_, j)| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    let w = Array2::from_shape_fn((n, 4), |_| rng.random_range(0.0..2.0));
    let out = r_step(&w, &design, &RegressionCoefficients::zeros(4, 3), RStepOptions::default()).unwrap();
    assert_eq!(out.status, RStepStatus::Converged);
    let gamma = out.coefficients.matrix();
    for m in 0..n {
        let eta: Vec<f64> = (0..4).map(|k| gamma.row(k).dot(&design.row(m))).collect();
        let top = eta.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = eta.iter().map(|v| (v - top).exp()).collect();
        let z: f64 = e.iter().sum();
        for k in 0..4 {
            assert!((out.pi[[m, k]] - e[k] / z).abs() < 1e-12);
        }
    }
    for k in 1..4 {
        for j in 0..3 {
            let score: f64 = (0..n).map(|m| (w[[m, k]] - w.row(m).sum() * out.pi[[m, k]]) * design[[m, j]]).sum();
            assert!(score.abs() < 1e-7, "score {score}");
        }
    }
}

#[test]
fn i_step_reaches_the_profile_optimum() {
    let sub = SubIntensity::new(array![[-1.5, 1.0], [0.0, -0.7]]).unwrap();
    let truth = common::bivariate(sub.clone(), 2.0, sub.clone(), 0.5, miph::InitialVector::new(array![0.6, 0.4]).unwrap());
    let obs = generate_synthetic(&truth, |_| vec![1.0], 0.1, 300, 21).unwrap();
    let pi = Array2::from_shape_fn((obs.len(), 2), |(_, k)| [0.6, 0.4][k]);
    let subs = vec![sub.clone(), sub];
    let out = i_step(&obs, &pi, &subs, &[1.0, 1.0], IStepOptions::default()).unwrap();
    assert!(out.improved);
    // the likelihood separates over margins given π, so a grid per margin is an oracle
    let mut best = out.betas.clone();
    for i in 0..2 {
        let mut best_val = f64::MIN;
        for k in 0..=400 {
            let b = (-2.0 + 4.0 * k as f64 / 400.0f64).exp();
            let mut trial = out.betas.clone();
            trial[i] = b;
            let v = log_lik_for_betas(&obs, &pi, &subs, &trial).unwrap_or(f64::MIN);
            if v > best_val {
                best_val = v;
                best[i] = b;
            }
        }
    }
    let grid_value = log_lik_for_betas(&obs, &pi, &subs, &best).unwrap();
    assert!(out.log_lik >= grid_value - 1e-3, "{} vs grid {grid_value}", out.log_lik);
}

fn covariate_model() -> miph::MiphModel {
    let m = common::small_model();
    let gamma = RegressionCoefficients::new(array![[0.0, 0.0], [0.5, 1.5], [-0.5, -1.0]]).unwrap();
    miph::MiphModel::new(m.margins().to_vec(), miph::InitialDistribution::Regression(gamma)).unwrap()
}

fn covariate_data(n: usize, seed: u64) -> ObservationSet {
    generate_synthetic(&covariate_model(), |r| vec![1.0, r.random_range(-1.0..1.0)], 0.2, n, seed).unwrap()
}

#[test]
fn fit_is_deterministic_across_thread_counts() {
    let obs = covariate_data(150, 31);
    let mut cfg = FitConfig::new(2);
    cfg.max_iterations = 6;
    cfg.stopping = StoppingRule::FixedIterations;
    cfg.seed = 4;
    cfg.threads = Some(1);
    let a = fit(&obs, &cfg).unwrap();
    cfg.threads = Some(3);
    let b = fit(&obs, &cfg).unwrap();
    assert_eq!(a.log_lik_trace, b.log_lik_trace);
    assert_eq!(a.model, b.model);
    cfg.seed = 5;
    let c = fit(&obs, &cfg).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn fit_reports_consistent_likelihood() {
    let obs = covariate_data(120, 32);
    let mut cfg = FitConfig::new(3);
    cfg.max_iterations = 15;
    let report = fit(&obs, &cfg).unwrap();
    assert_eq!(report.log_lik_trace.len(), report.iterations);
    let direct = observed_log_lik(&obs, &report.model).unwrap();
    assert!((direct - report.final_log_lik()).abs() < 1e-8 * direct.abs().max(1.0));
    assert!(report.model.margins().iter().all(|m| m.sub.conforms_to(Structure::Coxian)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn em_with_frozen_betas_never_decreases(seed in any::<u64>(), p in 1usize..4) {
        let obs = covariate_data(80, seed);
        let mut cfg = FitConfig::new(p);
        cfg.max_iterations = 25;
        cfg.stopping = StoppingRule::FixedIterations;
        cfg.freeze_betas = true;
        cfg.beta_init = Some(vec![0.8, 1.5]);
        cfg.seed = seed;
        let report = fit(&obs, &cfg).unwrap();
        let slack = 1e-8 * obs.len() as f64;
        for w in report.log_lik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - slack, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn e_step_counts_are_consistent(seed in any::<u64>()) {
        let m = common::small_model();
        let obs = generate_synthetic(&m, |_| vec![1.0], 0.3, 30, seed).unwrap();
        let x = transform_data(&obs, &m.betas()).unwrap();
        let pi = per_observation_pi(&m, obs.covariates()).unwrap();
        let subs: Vec<SubIntensity> = m.margins().iter().map(|g| g.sub.clone()).collect();
        let stats = e_step(&x, obs.indicators(), &pi, &subs).unwrap();
        for row in stats.b.outer_iter() {
            prop_assert!((row.sum() - 2.0).abs() < 1e-12);
        }
        for i in 0..2 {
            prop_assert!((stats.z.row(i).sum() - x.column(i).sum()).abs() < 1e-9 * x.column(i).sum());
            let observed = obs.indicators().column(i).iter().filter(|d| **d).count() as f64;
            prop_assert!((stats.n_exit.row(i).sum() - observed).abs() < 1e-9 * observed.max(1.0));
            prop_assert!(stats.n_trans[i].iter().all(|v| *v >= 0.0));
        }
    }
}
