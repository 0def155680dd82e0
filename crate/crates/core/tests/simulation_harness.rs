mod common;

use cohmm_core::simulation::{generate_scenario, run_monte_carlo, sample_skew_t};
use cohmm_core::{CopulaFamily, ErrorFamily, PowerOrder, ScenarioConfig, TrueParameters};
use common::rng;
use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn config(family: ErrorFamily, n_obs: usize) -> ScenarioConfig {
    ScenarioConfig::new(family, n_obs, CopulaFamily::Gaussian, PowerOrder::Expectile)
}

/// Errors `y - X β_k` under the true path.
fn true_errors(cfg: &ScenarioConfig, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let (data, states) = generate_scenario(cfg, seed).unwrap();
    let truth = &cfg.truth;
    let errors = (0..data.n_obs())
        .map(|t| {
            let s = states[t];
            (0..2)
                .map(|j| data.y()[(t, j)] - truth.beta[s][j][0] - truth.beta[s][j][1] * data.x()[(t, 1)])
                .collect()
        })
        .collect();
    (errors, states)
}

fn skewness(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[test]
fn gaussian_errors_recover_state_covariances() {
    let cfg = config(ErrorFamily::Gaussian, 100_000);
    let (errors, states) = true_errors(&cfg, 1);
    for k in 0..2 {
        let rows: Vec<&Vec<f64>> = errors.iter().zip(&states).filter(|(_, &s)| s == k).map(|(e, _)| e).collect();
        let n = rows.len() as f64;
        let cov = DMatrix::from_fn(2, 2, |a, b| rows.iter().map(|e| e[a] * e[b]).sum::<f64>() / n);
        assert!((cov - &cfg.truth.omega[k]).amax() < 0.02, "state {k}");
    }
}

#[test]
fn chain_occupancy_is_balanced() {
    let (_, states) = generate_scenario(&config(ErrorFamily::Gaussian, 100_000), 2).unwrap();
    let share = states.iter().filter(|&&s| s == 0).count() as f64 / states.len() as f64;
    assert!((share - 0.5).abs() < 0.03, "{share}");
}

#[test]
fn skew_t_skewness_signs_follow_the_slant() {
    let truth = TrueParameters::default();
    let mut g = rng(3);
    let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_skew_t(&truth.skew_alpha, &truth.omega[1], 5.0, &mut g)).collect();
    let first: Vec<f64> = draws.iter().map(|v| v[0]).collect();
    let second: Vec<f64> = draws.iter().map(|v| v[1]).collect();
    assert!(skewness(&first) < 0.0 && skewness(&second) > 0.0);

    let (errors, _) = true_errors(&config(ErrorFamily::SkewT5, 100_000), 4);
    let first: Vec<f64> = errors.iter().map(|v| v[0]).collect();
    let second: Vec<f64> = errors.iter().map(|v| v[1]).collect();
    assert!(skewness(&first) < 0.0 && skewness(&second) > 0.0);
}

#[test]
fn zero_slant_gives_student_t_margins() {
    let omega = TrueParameters::default().omega[1].clone();
    let mut g = rng(5);
    let n = 100_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_skew_t(&[0.0, 0.0], &omega, 5.0, &mut g)).collect();
    let t5 = StudentsT::new(0.0, 1.0, 5.0).unwrap();
    // 1% critical value of the one-sample Kolmogorov-Smirnov statistic
    let critical = 1.628 / (n as f64).sqrt();
    for j in 0..2 {
        let mut col: Vec<f64> = draws.iter().map(|v| v[j]).collect();
        col.sort_by(f64::total_cmp);
        let d = col
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = t5.cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < critical, "margin {j}: KS {d}");
    }
}

#[test]
fn skew_t_sampler_is_seeded() {
    let truth = TrueParameters::default();
    let a: Vec<Vec<f64>> = {
        let mut g = rng(8);
        (0..50).map(|_| sample_skew_t(&truth.skew_alpha, &truth.omega[0], 5.0, &mut g)).collect()
    };
    let mut g = rng(8);
    let b: Vec<Vec<f64>> = (0..50).map(|_| sample_skew_t(&truth.skew_alpha, &truth.omega[0], 5.0, &mut g)).collect();
    assert_eq!(a, b);
}

#[test]
fn separable_states_are_recovered_exactly() {
    let mut cfg = config(ErrorFamily::Gaussian, 500);
    cfg.truth = TrueParameters::default().with_omega_scale(1e-4);
    cfg.n_replications = 9;
    cfg.seed = 6;
    let report = run_monte_carlo(&cfg).unwrap();
    let mut ari = report.ari_at(0.5);
    ari.sort_by(f64::total_cmp);
    assert_eq!(ari.len(), 9);
    assert_eq!(ari[4], 1.0);
}

#[test]
fn monte_carlo_pipeline_is_deterministic() {
    let mut cfg = config(ErrorFamily::StudentT5, 200);
    cfg.n_replications = 3;
    cfg.seed = 12;
    let a = run_monte_carlo(&cfg).unwrap();
    let b = run_monte_carlo(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len() + a.failures.len(), 3);
}
