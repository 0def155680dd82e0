mod common;

use cohmm_core::copula::{
    fit_gaussian_weighted, fit_gaussian_weighted_mle, fit_t_weighted, gaussian_copula_logdensity, profile_nu,
    sample_copula, t_copula_logdensity, weighted_t_objective,
};
use cohmm_core::{CopulaParams, CorrelationMatrix, PseudoObservations};
use common::{gauss_legendre, phi, rng};
use nalgebra::DMatrix;
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

fn rho2(rho: f64) -> CorrelationMatrix {
    CorrelationMatrix::equicorrelated(2, rho).unwrap()
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Integrates `c(F(x1), F(x2)) f(x1) f(x2)` over the plane, i.e. the copula
/// density over the unit square after substituting `u = F(x)`.
fn copula_mass<C, F, D>(copula: C, cdf: F, pdf: D, half_width: f64) -> f64
where
    C: Fn(f64, f64) -> f64,
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    // x = half_width * s / (1 - s²) spreads nodes over the heavy tails
    let map = |s: f64| half_width * s / (1.0 - s * s);
    let jac = |s: f64| half_width * (1.0 + s * s) / ((1.0 - s * s) * (1.0 - s * s));
    gauss_legendre(
        |s1| {
            let x1 = map(s1);
            let u1 = cdf(x1);
            if u1 <= 0.0 || u1 >= 1.0 {
                return 0.0;
            }
            let inner = gauss_legendre(
                |s2| {
                    let x2 = map(s2);
                    let u2 = cdf(x2);
                    if u2 <= 0.0 || u2 >= 1.0 {
                        return 0.0;
                    }
                    copula(u1, u2) * pdf(x2) * jac(s2)
                },
                -1.0,
                1.0,
                12,
            );
            inner * pdf(x1) * jac(s1)
        },
        -1.0,
        1.0,
        12,
    )
}

#[test]
fn gaussian_copula_has_unit_mass() {
    let r = rho2(0.7);
    let mass = copula_mass(
        |a, b| gaussian_copula_logdensity(&[a, b], &r).map(f64::exp).unwrap_or(0.0),
        phi,
        std_normal_pdf,
        1.0,
    );
    assert!((mass - 1.0).abs() < 1e-5, "{mass}");
}

#[test]
fn t_copula_has_unit_mass() {
    let r = rho2(0.5);
    let t5 = StudentsT::new(0.0, 1.0, 5.0).unwrap();
    let mass = copula_mass(
        |a, b| t_copula_logdensity(&[a, b], &r, 5.0).map(f64::exp).unwrap_or(0.0),
        |x| t5.cdf(x),
        |x| t5.pdf(x),
        2.0,
    );
    assert!((mass - 1.0).abs() < 1e-4, "{mass}");
}

#[test]
fn t_copula_approaches_gaussian_on_a_grid() {
    let r = rho2(0.6);
    for i in 0..20 {
        let a = 0.03 + 0.047 * i as f64;
        let b = 0.97 - 0.031 * i as f64;
        let g = gaussian_copula_logdensity(&[a, b], &r).unwrap();
        let t = t_copula_logdensity(&[a, b], &r, 1e6).unwrap();
        assert!((g - t).abs() < 1e-3, "({a}, {b}): {g} vs {t}");
    }
    let t = t_copula_logdensity(&[0.2, 0.8], &CorrelationMatrix::identity(2), 1e6).unwrap();
    assert!(t.abs() < 1e-3);
}

fn ks_uniform(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &u)| (u - i as f64 / n).abs().max(((i + 1) as f64 / n - u).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn sampled_margins_are_uniform() {
    let mut g = rng(17);
    for params in [
        CopulaParams::gaussian(rho2(0.7)),
        CopulaParams::student_t(rho2(-0.4), 4.0).unwrap(),
    ] {
        let u = sample_copula(&params, 100_000, &mut g);
        for j in 0..2 {
            let col: Vec<f64> = u.matrix().column(j).iter().copied().collect();
            let d = ks_uniform(col);
            assert!(d < 0.01, "{:?} column {j}: KS {d}", params.family());
        }
    }
}

#[test]
fn independent_sample_gives_near_zero_correlation() {
    let mut g = rng(3);
    let u = sample_copula(&CopulaParams::gaussian(CorrelationMatrix::identity(3)), 100_000, &mut g);
    let fitted = fit_gaussian_weighted(&u, &vec![1.0; 100_000]).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                assert!(fitted.get(a, b).abs() < 0.02);
            }
        }
    }
}

#[test]
fn t_fit_reduces_to_gaussian_fit_in_the_limit() {
    let mut g = rng(8);
    let u = sample_copula(&CopulaParams::gaussian(rho2(0.45)), 5_000, &mut g);
    let w: Vec<f64> = (0..5_000).map(|t| 0.5 + (t % 7) as f64 / 7.0).collect();
    let gauss = fit_gaussian_weighted(&u, &w).unwrap();
    let t = fit_t_weighted(&u, &w, 1e6).unwrap();
    assert!((gauss.matrix() - t.matrix()).amax() < 1e-4);
}

#[test]
fn t_scale_em_recovers_correlation_and_tail() {
    let mut g = rng(21);
    let truth = CopulaParams::student_t(rho2(0.6), 5.0).unwrap();
    let n = 100_000;
    let u = sample_copula(&truth, n, &mut g);
    let w = vec![1.0; n];
    let mut nu = 10.0;
    let mut r = fit_gaussian_weighted(&u, &w).unwrap();
    for _ in 0..3 {
        r = fit_t_weighted(&u, &w, nu).unwrap();
        nu = profile_nu(&u, &w, &r).unwrap().nu;
    }
    assert!((r.get(0, 1) - 0.6).abs() < 0.02, "rho {}", r.get(0, 1));
    assert!((4.0..=6.5).contains(&nu), "nu {nu}");
}

#[test]
fn profile_nu_behaviour() {
    let mut g = rng(34);
    let n = 10_000;
    let w = vec![1.0; n];
    let u = sample_copula(&CopulaParams::student_t(rho2(0.5), 5.0).unwrap(), n, &mut g);
    let r = fit_t_weighted(&u, &w, 5.0).unwrap();
    let prof = profile_nu(&u, &w, &r).unwrap();
    assert!((4.0..=6.5).contains(&prof.nu), "nu {}", prof.nu);
    assert!(!prof.at_upper_bound);
    let at = weighted_t_objective(&u, &w, &r, prof.nu);
    for nearby in [prof.nu - 0.5, prof.nu + 0.5] {
        assert!(at >= weighted_t_objective(&u, &w, &r, nearby));
    }

    let gauss = sample_copula(&CopulaParams::gaussian(rho2(0.5)), 20_000, &mut g);
    let w = vec![1.0; 20_000];
    let r = fit_gaussian_weighted(&gauss, &w).unwrap();
    let prof = profile_nu(&gauss, &w, &r).unwrap();
    assert!(prof.at_upper_bound, "nu {}", prof.nu);
}

fn weighted_gaussian_objective(u: &PseudoObservations, w: &[f64], r: &CorrelationMatrix) -> f64 {
    (0..u.nrows()).map(|t| w[t] * gaussian_copula_logdensity(&u.row(t), r).unwrap()).sum()
}

#[test]
fn constrained_mle_beats_every_nearby_correlation() {
    let mut g = rng(55);
    let truth = CorrelationMatrix::from_rows(&[
        vec![1.0, 0.5, -0.3],
        vec![0.5, 1.0, 0.2],
        vec![-0.3, 0.2, 1.0],
    ])
    .unwrap();
    let u = sample_copula(&CopulaParams::student_t(truth, 4.0).unwrap(), 400, &mut g);
    let w: Vec<f64> = (0..400).map(|t| ((t * 37) % 11) as f64 / 10.0).collect();
    let mle = fit_gaussian_weighted_mle(&u, &w).unwrap();
    let best = weighted_gaussian_objective(&u, &w, &mle);
    assert!(best >= weighted_gaussian_objective(&u, &w, &fit_gaussian_weighted(&u, &w).unwrap()));
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        for h in [-1e-3, 1e-3] {
            let mut m: DMatrix<f64> = mle.matrix().clone();
            m[(a, b)] += h;
            m[(b, a)] += h;
            let nearby = CorrelationMatrix::new(m).unwrap();
            assert!(best >= weighted_gaussian_objective(&u, &w, &nearby) - 1e-9);
        }
    }
}
