//! Univariate standard Student-t helpers used by the t copula.

use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::normal;

/// Log-density of the standard Student-t with `nu` degrees of freedom.
pub fn logpdf(x: f64, nu: f64) -> f64 {
    log_norm_const(nu) - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

pub(crate) fn log_norm_const(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

pub fn cdf(x: f64, nu: f64) -> f64 {
    dist(nu).cdf(x)
}

/// Quantile of the standard Student-t.
///
/// Hill's approximation (ACM algorithm 396) gives the starting point, which is
/// then polished with Halley steps on the lower tail (the upper tail follows
/// by symmetry). Convergence is cubic, so a step below `1e-6` relative leaves
/// an error far under double precision and ends the iteration.
pub fn quantile(p: f64, nu: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let (lower, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    let t = dist(nu);
    let mut x = -hill_upper(2.0 * lower, nu);
    if !x.is_finite() {
        x = t.inverse_cdf(lower);
    }
    let c = log_norm_const(nu);
    for _ in 0..8 {
        let f = t.cdf(x) - lower;
        let dens = (c - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp();
        if dens <= 0.0 || !dens.is_finite() {
            break;
        }
        let newton = f / dens;
        // f''/f' of the cdf is the log-density slope -(nu + 1) x / (nu + x^2)
        let curvature = -(nu + 1.0) * x / (nu + x * x);
        let denom = 1.0 - 0.5 * newton * curvature;
        let step = if denom > 0.5 { newton / denom } else { newton };
        x -= step;
        if step.abs() <= 1e-6 * x.abs().max(1.0) {
            break;
        }
    }
    sign * x.abs()
}

/// Positive `x` with two-sided tail probability `p = 2 P(T > x)`.
fn hill_upper(p: f64, n: f64) -> f64 {
    let a = 1.0 / (n - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * PI / 2.0).sqrt() * n;
    let mut y = (d * p).powf(2.0 / n);
    if y > 0.05 + a {
        let x = normal::quantile(0.5 * p);
        y = x * x;
        if n < 5.0 {
            c += 0.3 * (n - 4.5) * (x + 0.6);
        }
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        y = (a * y * y).exp_m1();
    } else {
        y = ((1.0 / (((n + 6.0) / (n * y) - 0.089 * d - 0.822) * (n + 2.0) * 3.0) + 0.5 / (n + 4.0)) * y - 1.0)
            * (n + 1.0)
            / (n + 2.0)
            + 1.0 / y;
    }
    (n * y).sqrt()
}

fn dist(nu: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, nu).expect("degrees of freedom must be positive")
}
