//! Asymmetric power losses and the asymmetric Laplace / asymmetric normal
//! working densities.
//!
//! Both densities share the form `B(σ) · exp(-ω((y - μ)/σ))` where `ω` is the
//! asymmetric `l`-power loss. With `l = 1` the location is the τ-quantile, with
//! `l = 2` it is the τ-expectile.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Smallest uniform fed to an inverse cdf when sampling.
const SAMPLE_U_MIN: f64 = 1e-300;
/// Largest uniform fed to an inverse cdf when sampling.
const SAMPLE_U_MAX: f64 = 1.0 - 1e-16;

/// Asymmetry level `τ`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TailIndex(f64);

impl TailIndex {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidParameter(format!(
                "tail index must lie in (0, 1), got {tau}"
            )))
        }
    }

    pub fn median() -> Self {
        Self(0.5)
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// `|τ - 1{u < 0}|`, the side-dependent weight of the loss.
    #[inline]
    pub fn side_weight(self, u: f64) -> f64 {
        if u < 0.0 {
            1.0 - self.0
        } else {
            self.0
        }
    }

    /// The mirrored index `1 - τ`.
    pub fn mirrored(self) -> Self {
        Self(1.0 - self.0)
    }
}

impl TryFrom<f64> for TailIndex {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<TailIndex> for f64 {
    fn from(t: TailIndex) -> f64 {
        t.0
    }
}

/// Power of the asymmetric loss: `1` for quantiles, `2` for expectiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PowerOrder {
    Quantile,
    Expectile,
}

impl PowerOrder {
    pub fn from_exponent(l: u8) -> Result<Self> {
        match l {
            1 => Ok(Self::Quantile),
            2 => Ok(Self::Expectile),
            _ => Err(Error::InvalidParameter(format!(
                "loss power must be 1 or 2, got {l}"
            ))),
        }
    }

    pub fn exponent(self) -> u8 {
        match self {
            Self::Quantile => 1,
            Self::Expectile => 2,
        }
    }

    /// Log-density of the matching working distribution (AL or AN).
    pub fn logpdf(self, y: f64, p: LocationScale, tau: TailIndex) -> f64 {
        match self {
            Self::Quantile => al_logpdf(y, p, tau),
            Self::Expectile => an_logpdf(y, p, tau),
        }
    }

    pub fn cdf(self, y: f64, p: LocationScale, tau: TailIndex) -> f64 {
        match self {
            Self::Quantile => al_cdf(y, p, tau),
            Self::Expectile => an_cdf(y, p, tau),
        }
    }

    pub fn quantile(self, q: f64, p: LocationScale, tau: TailIndex) -> Result<f64> {
        match self {
            Self::Quantile => al_quantile(q, p, tau),
            Self::Expectile => an_quantile(q, p, tau),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, p: LocationScale, tau: TailIndex, rng: &mut R) -> f64 {
        match self {
            Self::Quantile => al_sample(p, tau, rng),
            Self::Expectile => an_sample(p, tau, rng),
        }
    }
}

impl TryFrom<u8> for PowerOrder {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Self::from_exponent(value)
    }
}

impl From<PowerOrder> for u8 {
    fn from(l: PowerOrder) -> u8 {
        l.exponent()
    }
}

/// Location `μ` and strictly positive scale `σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationScale {
    mu: f64,
    sigma: f64,
}

impl LocationScale {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() && mu.is_finite() {
            Ok(Self { mu, sigma })
        } else {
            Err(Error::InvalidParameter(format!(
                "need finite location and positive scale, got mu={mu}, sigma={sigma}"
            )))
        }
    }

    #[inline]
    pub fn mu(self) -> f64 {
        self.mu
    }

    #[inline]
    pub fn sigma(self) -> f64 {
        self.sigma
    }

    #[inline]
    fn standardize(self, y: f64) -> f64 {
        (y - self.mu) / self.sigma
    }
}

/// `ω_{l,τ}(u) = |u|^l · |τ - 1{u<0}|`.
#[inline]
pub fn asymmetric_loss(u: f64, l: PowerOrder, tau: TailIndex) -> f64 {
    let w = tau.side_weight(u);
    match l {
        PowerOrder::Quantile => u.abs() * w,
        PowerOrder::Expectile => u * u * w,
    }
}

pub fn al_logpdf(y: f64, p: LocationScale, tau: TailIndex) -> f64 {
    let t = tau.get();
    (t * (1.0 - t) / p.sigma).ln() - asymmetric_loss(p.standardize(y), PowerOrder::Quantile, tau)
}

pub fn al_cdf(y: f64, p: LocationScale, tau: TailIndex) -> f64 {
    let t = tau.get();
    let z = p.standardize(y);
    if z <= 0.0 {
        t * ((1.0 - t) * z).exp()
    } else {
        1.0 - (1.0 - t) * (-t * z).exp()
    }
}

pub fn al_quantile(q: f64, p: LocationScale, tau: TailIndex) -> Result<f64> {
    check_probability(q)?;
    let t = tau.get();
    let z = if q <= t {
        (q / t).ln() / (1.0 - t)
    } else {
        -((1.0 - q) / (1.0 - t)).ln() / t
    };
    Ok(p.mu + p.sigma * z)
}

fn an_log_norm_const(sigma: f64, t: f64) -> f64 {
    let (a, b) = (t.sqrt(), (1.0 - t).sqrt());
    (2.0 * a * b).ln() - 0.5 * (PI * sigma * sigma).ln() - (a + b).ln()
}

pub fn an_logpdf(y: f64, p: LocationScale, tau: TailIndex) -> f64 {
    an_log_norm_const(p.sigma, tau.get())
        - asymmetric_loss(p.standardize(y), PowerOrder::Expectile, tau)
}

/// Probability mass of the AN distribution below its location.
fn an_mass_below(t: f64) -> f64 {
    let (a, b) = (t.sqrt(), (1.0 - t).sqrt());
    a / (a + b)
}

/// Each half-line of the AN density is a rescaled Gaussian tail:
/// below `μ` the kernel is `exp(-(1-τ) z²)`, above it `exp(-τ z²)`.
pub fn an_cdf(y: f64, p: LocationScale, tau: TailIndex) -> f64 {
    let t = tau.get();
    let z = p.standardize(y);
    let below = an_mass_below(t);
    if z <= 0.0 {
        2.0 * below * normal::cdf((2.0 * (1.0 - t)).sqrt() * z)
    } else {
        1.0 - 2.0 * (1.0 - below) * normal::cdf(-(2.0 * t).sqrt() * z)
    }
}

pub fn an_quantile(q: f64, p: LocationScale, tau: TailIndex) -> Result<f64> {
    check_probability(q)?;
    let t = tau.get();
    let below = an_mass_below(t);
    let z = if q <= below {
        normal::quantile(q / (2.0 * below)) / (2.0 * (1.0 - t)).sqrt()
    } else {
        -normal::quantile((1.0 - q) / (2.0 * (1.0 - below))) / (2.0 * t).sqrt()
    };
    Ok(p.mu + p.sigma * z)
}

fn sampling_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>().clamp(SAMPLE_U_MIN, SAMPLE_U_MAX)
}

/// Inverse-cdf draw from the asymmetric Laplace distribution.
pub fn al_sample<R: Rng + ?Sized>(p: LocationScale, tau: TailIndex, rng: &mut R) -> f64 {
    let u = sampling_uniform(rng);
    al_quantile(u, p, tau).expect("clamped uniform is interior")
}

/// Inverse-cdf draw from the asymmetric normal distribution.
pub fn an_sample<R: Rng + ?Sized>(p: LocationScale, tau: TailIndex, rng: &mut R) -> f64 {
    let u = sampling_uniform(rng);
    an_quantile(u, p, tau).expect("clamped uniform is interior")
}

fn check_probability(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tau(t: f64) -> TailIndex {
        TailIndex::new(t).unwrap()
    }

    fn ls(mu: f64, sigma: f64) -> LocationScale {
        LocationScale::new(mu, sigma).unwrap()
    }

    #[test]
    fn rejects_invalid_domain_values() {
        assert!(TailIndex::new(0.0).is_err());
        assert!(TailIndex::new(1.0).is_err());
        assert!(TailIndex::new(f64::NAN).is_err());
        assert!(PowerOrder::from_exponent(3).is_err());
        assert!(LocationScale::new(0.0, 0.0).is_err());
        assert!(LocationScale::new(0.0, -1.0).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(asymmetric_loss(2.0, PowerOrder::Quantile, tau(0.5)), 1.0);
        assert!((asymmetric_loss(-1.0, PowerOrder::Expectile, tau(0.9)) - 0.1).abs() < 1e-15);
        assert_eq!(asymmetric_loss(0.0, PowerOrder::Expectile, tau(0.3)), 0.0);
    }

    #[test]
    fn al_logpdf_examples() {
        assert!((al_logpdf(1.7, ls(1.7, 1.0), tau(0.5)) - 0.25f64.ln()).abs() < 1e-15);
        let v = al_logpdf(3.0, ls(1.0, 2.0), tau(0.5));
        assert!((v - (0.125f64.ln() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn al_cdf_at_location_is_tau() {
        assert!((al_cdf(0.4, ls(0.4, 2.0), tau(0.3)) - 0.3).abs() < 1e-16);
    }

    #[test]
    fn al_round_trip_examples() {
        let p = ls(0.0, 1.5);
        for y in [-3.0, 0.0, 5.0] {
            let back = al_quantile(al_cdf(y, p, tau(0.2)), p, tau(0.2)).unwrap();
            assert!((back - y).abs() < 1e-12, "y={y} back={back}");
        }
    }

    #[test]
    fn an_at_half_is_gaussian() {
        for y in [-4.0, -1.0, 0.0, 0.3, 2.2, 7.0] {
            let v = an_logpdf(y, ls(0.0, 1.0), tau(0.5));
            assert!((v - normal::logpdf(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn an_cdf_at_location() {
        assert!((an_cdf(1.0, ls(1.0, 3.0), tau(0.5)) - 0.5).abs() < 1e-15);
        let expect = 0.3 / (0.3 + 0.91f64.sqrt());
        assert!((an_cdf(0.0, ls(0.0, 1.0), tau(0.09)) - expect).abs() < 1e-12);
        assert!((expect - 0.2393).abs() < 1e-4);
    }

    #[test]
    fn quantiles_reject_boundary_probabilities() {
        for q in [0.0, 1.0, -0.1, 1.1] {
            assert!(al_quantile(q, ls(0.0, 1.0), tau(0.5)).is_err());
            assert!(an_quantile(q, ls(0.0, 1.0), tau(0.5)).is_err());
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..16)
                .map(|_| an_sample(ls(1.0, 2.0), tau(0.3), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_mirror_symmetric(u in -50.0f64..50.0, t in 0.001f64..0.999, l in 1u8..=2) {
            let l = PowerOrder::from_exponent(l).unwrap();
            let t = tau(t);
            let v = asymmetric_loss(u, l, t);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, u == 0.0);
            let m = asymmetric_loss(-u, l, t.mirrored());
            prop_assert!((v - m).abs() <= 1e-12 * v.max(1.0));
        }

        #[test]
        fn quantile_inverts_cdf(q in 0.001f64..0.999, t in 0.01f64..0.99, mu in -5.0f64..5.0, s in 0.1f64..4.0, l in 1u8..=2) {
            let l = PowerOrder::from_exponent(l).unwrap();
            let p = ls(mu, s);
            let y = l.quantile(q, p, tau(t)).unwrap();
            prop_assert!((l.cdf(y, p, tau(t)) - q).abs() < 1e-10);
        }
    }
}
