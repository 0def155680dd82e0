mod common;

use cohmm_core::hmm::fit;
use cohmm_core::inference::{
    adjusted_rand_index, best_agreement_permutation, bootstrap_se, classification_entropy, count_params,
    information_criteria, select_model,
};
use cohmm_core::simulation::{generate_scenario, run_monte_carlo};
use cohmm_core::{CopulaFamily, ErrorFamily, ModelSpec, Posteriors, PowerOrder, ScenarioConfig, TailIndex};
use common::{ari_by_pairs, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn posteriors(gamma: DMatrix<f64>) -> Posteriors {
    Posteriors {
        gamma,
        xi: Vec::new(),
        loglik: 0.0,
    }
}

fn cehmm_spec(k: usize, seed: u64) -> ModelSpec {
    ModelSpec::uniform_tau(PowerOrder::Expectile, k, CopulaFamily::Gaussian, TailIndex::median(), 2)
        .with_starts(5)
        .with_seed(seed)
}

#[test]
fn parameter_counts_follow_the_block_formula() {
    let counts: Vec<usize> = (1..=4).map(|k| count_params(k, CopulaFamily::Gaussian, 5, 6)).collect();
    assert_eq!(counts, vec![45, 93, 143, 195]);
    for k in 1..=4 {
        assert_eq!(
            count_params(k, CopulaFamily::StudentT, 5, 6),
            count_params(k, CopulaFamily::Gaussian, 5, 6) + k
        );
    }
}

#[test]
fn icl_penalty_matches_direct_summation() {
    let gamma = DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.3, 0.7, 0.5, 0.5]);
    let direct = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln() + 0.3 * 0.3f64.ln() + 0.7 * 0.7f64.ln() + 0.5f64.ln());
    let post = posteriors(gamma);
    assert!((classification_entropy(&post) - direct).abs() < 1e-12);
    let ic = information_criteria(-12.5, 7, &post);
    assert!((ic.aic - (25.0 + 14.0)).abs() < 1e-12);
    assert!((ic.bic - (25.0 + 7.0 * 3f64.ln())).abs() < 1e-12);
    assert!((ic.icl - (ic.bic + 2.0 * direct)).abs() < 1e-12);
}

#[test]
fn icl_equals_bic_without_assignment_uncertainty() {
    let confident = posteriors(DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]));
    let ic = information_criteria(-3.0, 5, &confident);
    assert_eq!(ic.icl, ic.bic);
    let single = posteriors(DMatrix::from_element(6, 1, 1.0));
    let ic = information_criteria(-3.0, 5, &single);
    assert_eq!(ic.icl, ic.bic);
}

#[test]
fn ari_matches_pair_enumeration() {
    let mut g = rng(9);
    for _ in 0..200 {
        let a: Vec<usize> = (0..8).map(|_| g.random_range(0..3)).collect();
        let b: Vec<usize> = (0..8).map(|_| g.random_range(0..3)).collect();
        let (fast, slow) = (adjusted_rand_index(&a, &b).unwrap(), ari_by_pairs(&a, &b));
        if slow.is_finite() {
            assert!((fast - slow).abs() < 1e-12, "{a:?} {b:?}: {fast} vs {slow}");
        }
    }
    let a = [0, 0, 1, 1, 2, 2, 0, 1];
    assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
}

#[test]
fn ari_of_independent_labelings_is_near_zero() {
    let mut g = rng(10);
    let a: Vec<usize> = (0..10_000).map(|_| g.random_range(0..2)).collect();
    let b: Vec<usize> = (0..10_000).map(|_| g.random_range(0..2)).collect();
    assert!(adjusted_rand_index(&a, &b).unwrap().abs() < 0.02);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ari_is_symmetric_and_label_free(labels in prop::collection::vec((0usize..3, 0usize..3), 4..40), shift in 1usize..3) {
        let a: Vec<usize> = labels.iter().map(|p| p.0).collect();
        let b: Vec<usize> = labels.iter().map(|p| p.1).collect();
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        let relabeled: Vec<usize> = a.iter().map(|v| (v + shift) % 3).collect();
        let rb = adjusted_rand_index(&relabeled, &b).unwrap();
        prop_assert!(ab.is_nan() && ba.is_nan() || (ab - ba).abs() < 1e-12);
        prop_assert!(ab.is_nan() && rb.is_nan() || (ab - rb).abs() < 1e-12);
    }

    #[test]
    fn icl_never_below_bic(raw in prop::collection::vec(0.0f64..1.0, 3..30)) {
        let gamma = DMatrix::from_fn(raw.len(), 2, |t, k| if k == 0 { raw[t] } else { 1.0 - raw[t] });
        let ic = information_criteria(-10.0, 4, &posteriors(gamma));
        prop_assert!(ic.icl >= ic.bic);
    }
}

fn scenario(n_obs: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(ErrorFamily::Gaussian, n_obs, CopulaFamily::Gaussian, PowerOrder::Expectile);
    cfg.seed = seed;
    cfg
}

#[test]
fn bootstrap_without_noise_has_vanishing_spread() {
    let (data, _) = generate_scenario(&scenario(300, 1), 11).unwrap();
    let spec = cehmm_spec(2, 4);
    let mut fitted = fit(&data, &spec).unwrap();
    for s in fitted.params.sigma.iter_mut().flatten() {
        *s = 1e-6;
    }
    let report = bootstrap_se(&fitted, &data, &spec, 8, 77).unwrap();
    assert_eq!(report.n_failed, 0);
    for v in report.se.beta.iter().flatten().flatten().chain(report.se.sigma.iter().flatten()) {
        assert!(*v < 1e-4, "se {v}");
    }
}

#[test]
fn bootstrap_is_reproducible() {
    let (data, _) = generate_scenario(&scenario(200, 2), 5).unwrap();
    let spec = cehmm_spec(2, 8);
    let fitted = fit(&data, &spec).unwrap();
    let a = bootstrap_se(&fitted, &data, &spec, 4, 123).unwrap();
    let b = bootstrap_se(&fitted, &data, &spec, 4, 123).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bootstrap_se_tracks_monte_carlo_spread() {
    let cfg = scenario(1000, 31);
    let (data, states) = generate_scenario(&cfg, 4242).unwrap();
    let spec = cehmm_spec(2, 3);
    let mut fitted = fit(&data, &spec).unwrap();
    let perm = best_agreement_permutation(&fitted.decoded_states, &states, 2);
    fitted.params = fitted.params.permuted(&perm);
    let report = bootstrap_se(&fitted, &data, &spec, 100, 99).unwrap();
    assert!(!report.unreliable);

    let mc = run_monte_carlo(&cfg).unwrap();
    for row in mc.bias_at(0.5) {
        let se = report.se.beta[row.state][row.response][row.coefficient];
        let ratio = se / row.sd;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "state {} response {} coef {}: bootstrap {se} vs Monte Carlo {}",
            row.state,
            row.response,
            row.coefficient,
            row.sd
        );
    }
}

#[test]
fn icl_recovers_two_states() {
    let mut hits = 0;
    for rep in 0..20u64 {
        let (data, _) = generate_scenario(&scenario(500, 7), rep).unwrap();
        let table = select_model(&data, &[1, 2, 3], &[CopulaFamily::Gaussian], &cehmm_spec(1, rep));
        let best = table.best_icl.expect("some cell fits");
        if table.cells[best].n_states == 2 {
            hits += 1;
        }
        for cell in &table.cells {
            if let (1, Some(ic)) = (cell.n_states, cell.criteria) {
                assert_eq!(ic.icl, ic.bic);
            }
        }
    }
    assert!(hits >= 16, "ICL chose K=2 in {hits} of 20");
}
