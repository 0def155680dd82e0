//! Monte Carlo harness for the two-state bivariate regime-switching design.
//!
//! Responses follow `Y_t = X_t β_k + ε_{t,k}` with `X_t = (1, x_t)`,
//! `x_t ~ N(0, 1)`, a symmetric two-state chain and Gaussian, Student-t or
//! skew-t errors with state-specific scale matrices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::data::TimeSeriesDataset;
use crate::distributions::{PowerOrder, TailIndex};
use crate::error::{Error, Result};
use crate::hmm::{fit, ModelSpec};
use crate::inference::{adjusted_rand_index, best_agreement_permutation};
use crate::{normal, quadrature, student_t};

pub const DEFAULT_REPLICATIONS: usize = 50;
pub const DEFAULT_HARNESS_STARTS: usize = 5;
const ERROR_DF: f64 = 5.0;

/// Error law of the data generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorFamily {
    Gaussian,
    StudentT5,
    SkewT5,
}

impl ErrorFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::StudentT5 => "student_t5",
            Self::SkewT5 => "skew_t5",
        }
    }
}

impl std::str::FromStr for ErrorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "student_t5" | "t5" | "t" => Ok(Self::StudentT5),
            "skew_t5" | "skew_t" | "skewt" => Ok(Self::SkewT5),
            other => Err(Error::InvalidParameter(format!("unknown error family '{other}'"))),
        }
    }
}

/// Generating parameters: `beta[k][j] = (intercept, slope)`, scale matrices
/// `omega[k]` and the transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub beta: Vec<Vec<Vec<f64>>>,
    pub omega: Vec<DMatrix<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub skew_alpha: Vec<f64>,
}

impl Default for TrueParameters {
    fn default() -> Self {
        let omega = |r: f64| DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
        Self {
            beta: vec![
                vec![vec![-2.0, 1.0], vec![3.0, -2.0]],
                vec![vec![3.0, -2.0], vec![-2.0, 1.0]],
            ],
            omega: vec![omega(0.2), omega(0.7)],
            transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            skew_alpha: vec![-2.0, 2.0],
        }
    }
}

impl TrueParameters {
    /// Multiplies every scale matrix by `factor`.
    pub fn with_omega_scale(mut self, factor: f64) -> Self {
        for m in &mut self.omega {
            *m *= factor;
        }
        self
    }

    pub fn n_states(&self) -> usize {
        self.beta.len()
    }

    pub fn dim(&self) -> usize {
        self.omega[0].nrows()
    }

    /// Location functional of the error margin `j` in state `k` at level `tau`:
    /// its `tau`-quantile for `l = 1`, its `tau`-expectile for `l = 2`.
    pub fn error_offset(&self, family: ErrorFamily, order: PowerOrder, k: usize, j: usize, tau: TailIndex) -> f64 {
        let scale = self.omega[k][(j, j)].sqrt();
        let margin = match family {
            ErrorFamily::Gaussian => Margin::Gaussian,
            ErrorFamily::StudentT5 => Margin::StudentT,
            ErrorFamily::SkewT5 => Margin::SkewT(skew_margin_slant(&self.omega[k], &self.skew_alpha, j)),
        };
        scale
            * match order {
                PowerOrder::Quantile => margin.quantile(tau.get()),
                PowerOrder::Expectile => margin.expectile(tau.get()),
            }
    }

    /// Target coefficients at level `tau`: the intercept absorbs the error offset.
    pub fn target_beta(&self, family: ErrorFamily, order: PowerOrder, tau: TailIndex) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states())
            .map(|k| {
                (0..self.dim())
                    .map(|j| {
                        let mut b = self.beta[k][j].clone();
                        b[0] += self.error_offset(family, order, k, j, tau);
                        b
                    })
                    .collect()
            })
            .collect()
    }
}

/// `δ = Ω̄α / √(1 + αᵀΩ̄α)` for the correlation form of `omega`.
fn skew_delta(omega: &DMatrix<f64>, alpha: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let d = omega.nrows();
    let w = DVector::from_fn(d, |i, _| omega[(i, i)].sqrt());
    let corr = DMatrix::from_fn(d, d, |i, j| omega[(i, j)] / (w[i] * w[j]));
    let a = DVector::from_column_slice(alpha);
    let ca = &corr * &a;
    let delta = &ca / (1.0 + a.dot(&ca)).sqrt();
    (delta, corr)
}

/// Slant of the standardized univariate skew-t margin `j`.
fn skew_margin_slant(omega: &DMatrix<f64>, alpha: &[f64], j: usize) -> f64 {
    let (delta, _) = skew_delta(omega, alpha);
    delta[j] / (1.0 - delta[j] * delta[j]).sqrt()
}

/// Standardized error margins (zero location, unit scale, 5 degrees of freedom
/// where applicable).
#[derive(Debug, Clone, Copy)]
enum Margin {
    Gaussian,
    StudentT,
    SkewT(f64),
}

impl Margin {
    fn pdf(self, x: f64) -> f64 {
        match self {
            Self::Gaussian => normal::pdf(x),
            Self::StudentT => student_t::logpdf(x, ERROR_DF).exp(),
            Self::SkewT(lambda) => {
                let arg = lambda * x * ((ERROR_DF + 1.0) / (ERROR_DF + x * x)).sqrt();
                2.0 * student_t::logpdf(x, ERROR_DF).exp() * student_t::cdf(arg, ERROR_DF + 1.0)
            }
        }
    }

    fn cdf(self, x: f64) -> f64 {
        match self {
            Self::Gaussian => normal::cdf(x),
            Self::StudentT => student_t::cdf(x, ERROR_DF),
            Self::SkewT(_) => {
                if x <= 0.0 {
                    quadrature::integrate_lower(|y| self.pdf(y), x, 1e-12)
                } else {
                    1.0 - quadrature::integrate_upper(|y| self.pdf(y), x, 1e-12)
                }
            }
        }
    }

    fn quantile(self, p: f64) -> f64 {
        match self {
            Self::Gaussian => normal::quantile(p),
            Self::StudentT => student_t::quantile(p, ERROR_DF),
            Self::SkewT(_) => quadrature::bisect(|x| self.cdf(x) - p, -60.0, 60.0, 1e-11),
        }
    }

    /// `E[(Y - m)_+]`.
    fn upper_partial(self, m: f64) -> f64 {
        match self {
            Self::Gaussian => normal::pdf(m) - m * (1.0 - normal::cdf(m)),
            Self::StudentT => {
                (ERROR_DF + m * m) / (ERROR_DF - 1.0) * self.pdf(m) - m * (1.0 - student_t::cdf(m, ERROR_DF))
            }
            Self::SkewT(_) => quadrature::integrate_upper(|y| (y - m) * self.pdf(y), m, 1e-12),
        }
    }

    /// `E[(m - Y)_+]`.
    fn lower_partial(self, m: f64) -> f64 {
        match self {
            Self::Gaussian | Self::StudentT => self.upper_partial(m) + m,
            Self::SkewT(_) => quadrature::integrate_lower(|y| (m - y) * self.pdf(y), m, 1e-12),
        }
    }

    fn expectile(self, tau: f64) -> f64 {
        quadrature::bisect(
            |m| (1.0 - tau) * self.lower_partial(m) - tau * self.upper_partial(m),
            -30.0,
            30.0,
            1e-11,
        )
    }
}

/// One skew-t draw with zero location, scale matrix `omega`, slant `alpha` and
/// `df` degrees of freedom, built from a hidden-truncation skew-normal vector.
pub fn sample_skew_t<R: Rng + ?Sized>(alpha: &[f64], omega: &DMatrix<f64>, df: f64, rng: &mut R) -> Vec<f64> {
    let d = omega.nrows();
    let (delta, corr) = skew_delta(omega, alpha);
    let resid = corr - &delta * delta.transpose();
    let l = resid.cholesky().expect("slant keeps the residual covariance positive definite").l();
    let x0: f64 = rng.sample(StandardNormal);
    let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = &delta * x0 + l * eps;
    let sign = if x0 > 0.0 { 1.0 } else { -1.0 };
    let w = ChiSquared::new(df).expect("df > 0").sample(rng) / df;
    (0..d).map(|j| sign * x[j] * omega[(j, j)].sqrt() / w.sqrt()).collect()
}

fn sample_error<R: Rng + ?Sized>(family: ErrorFamily, truth: &TrueParameters, k: usize, chol: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let d = truth.dim();
    match family {
        ErrorFamily::SkewT5 => sample_skew_t(&truth.skew_alpha, &truth.omega[k], ERROR_DF, rng),
        _ => {
            let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = chol * eps;
            let scale = match family {
                ErrorFamily::StudentT5 => (ChiSquared::new(ERROR_DF).expect("df > 0").sample(rng) / ERROR_DF).sqrt(),
                _ => 1.0,
            };
            z.iter().map(|v| v / scale).collect()
        }
    }
}

/// Scenario of the Monte Carlo study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub error_family: ErrorFamily,
    pub n_obs: usize,
    pub fit_copula: CopulaFamily,
    pub model: PowerOrder,
    pub tau_levels: Vec<TailIndex>,
    pub n_replications: usize,
    /// Random starts per fitted replication.
    pub n_starts: usize,
    pub seed: u64,
    pub truth: TrueParameters,
}

impl ScenarioConfig {
    pub fn new(error_family: ErrorFamily, n_obs: usize, fit_copula: CopulaFamily, model: PowerOrder) -> Self {
        Self {
            error_family,
            n_obs,
            fit_copula,
            model,
            tau_levels: vec![TailIndex::median()],
            n_replications: DEFAULT_REPLICATIONS,
            n_starts: DEFAULT_HARNESS_STARTS,
            seed: 0,
            truth: TrueParameters::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 10 {
            return Err(Error::InvalidParameter("sample size must be at least 10".into()));
        }
        if self.tau_levels.is_empty() || self.n_replications == 0 || self.n_starts == 0 {
            return Err(Error::InvalidParameter(
                "need tau levels, replications and starts".into(),
            ));
        }
        Ok(())
    }
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws one dataset and its hidden path (0-based states).
pub fn generate_scenario(cfg: &ScenarioConfig, rep_seed: u64) -> Result<(TimeSeriesDataset, Vec<usize>)> {
    cfg.validate()?;
    let truth = &cfg.truth;
    let (n, d, k) = (cfg.n_obs, truth.dim(), truth.n_states());
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let chols: Vec<DMatrix<f64>> = truth
        .omega
        .iter()
        .map(|m| m.clone().cholesky().map(|c| c.l()).ok_or(Error::NotPositiveDefinite))
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(n);
    let mut s = rng.random_range(0..k);
    for t in 0..n {
        if t > 0 {
            let u: f64 = rng.random();
            let row = &truth.transition[s];
            let mut acc = 0.0;
            let mut next = k - 1;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            s = next;
        }
        states.push(s);
    }

    let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let mut y = DMatrix::zeros(n, d);
    for t in 0..n {
        let s = states[t];
        let e = sample_error(cfg.error_family, truth, s, &chols[s], &mut rng);
        for j in 0..d {
            y[(t, j)] = truth.beta[s][j][0] + truth.beta[s][j][1] * x[(t, 1)] + e[j];
        }
    }
    Ok((TimeSeriesDataset::new(y, x)?, states))
}

/// One fitted replication at one `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub tau: f64,
    pub ari: f64,
    /// Coefficients after aligning states with the true path, `[k][j][c]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    pub initial_loglik: f64,
    pub final_loglik: f64,
    pub monotone_fraction: f64,
    pub converged: bool,
    pub n_iter: usize,
}

/// Mean bias and standard deviation of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub tau: f64,
    pub state: usize,
    pub response: usize,
    pub coefficient: usize,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: ScenarioConfig,
    pub records: Vec<ReplicationRecord>,
    pub bias: Vec<BiasRow>,
    /// `(replication, tau, reason)` for fits that failed.
    pub failures: Vec<(usize, f64, String)>,
}

impl MonteCarloReport {
    pub fn ari_at(&self, tau: f64) -> Vec<f64> {
        self.records.iter().filter(|r| r.tau == tau).map(|r| r.ari).collect()
    }

    pub fn bias_at(&self, tau: f64) -> Vec<&BiasRow> {
        self.bias.iter().filter(|r| r.tau == tau).collect()
    }
}

fn run_replication(cfg: &ScenarioConfig, rep: usize) -> Vec<std::result::Result<ReplicationRecord, (usize, f64, String)>> {
    let data_seed = mix_seed(cfg.seed, 2 * rep as u64);
    let fit_seed = mix_seed(cfg.seed, 2 * rep as u64 + 1);
    let (data, truth_states) = match generate_scenario(cfg, data_seed) {
        Ok(v) => v,
        Err(e) => {
            return cfg.tau_levels.iter().map(|t| Err((rep, t.get(), e.to_string()))).collect();
        }
    };
    let k = cfg.truth.n_states();
    cfg.tau_levels
        .iter()
        .map(|&tau| {
            let spec = ModelSpec::uniform_tau(cfg.model, k, cfg.fit_copula, tau, data.dim())
                .with_seed(fit_seed)
                .with_starts(cfg.n_starts);
            let fitted = fit(&data, &spec).map_err(|e| (rep, tau.get(), e.to_string()))?;
            let perm = best_agreement_permutation(&fitted.decoded_states, &truth_states, k);
            let aligned = fitted.params.permuted(&perm);
            Ok(ReplicationRecord {
                replication: rep,
                tau: tau.get(),
                ari: adjusted_rand_index(&fitted.decoded_states, &truth_states).expect("equal lengths"),
                beta: aligned.beta,
                initial_loglik: fitted.ll_trace[0],
                final_loglik: fitted.loglik(),
                monotone_fraction: fitted.monotone_fraction(),
                converged: fitted.converged,
                n_iter: fitted.n_iter,
            })
        })
        .collect()
}

fn summarize(cfg: &ScenarioConfig, records: &[ReplicationRecord]) -> Vec<BiasRow> {
    let mut rows = Vec::new();
    for &tau in &cfg.tau_levels {
        let target = cfg.truth.target_beta(cfg.error_family, cfg.model, tau);
        let here: Vec<&ReplicationRecord> = records.iter().filter(|r| r.tau == tau.get()).collect();
        if here.is_empty() {
            continue;
        }
        for (k, state) in target.iter().enumerate() {
            for (j, coefs) in state.iter().enumerate() {
                for (c, &truth) in coefs.iter().enumerate() {
                    let est: Vec<f64> = here.iter().map(|r| r.beta[k][j][c]).collect();
                    let n = est.len() as f64;
                    let mean = est.iter().sum::<f64>() / n;
                    let sd = if est.len() > 1 {
                        (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    rows.push(BiasRow {
                        tau: tau.get(),
                        state: k,
                        response: j,
                        coefficient: c,
                        truth,
                        bias: mean - truth,
                        sd,
                    });
                }
            }
        }
    }
    rows
}

/// Runs all replications of a scenario. Every replication draws fresh
/// covariates, errors and hidden path from seeds derived from `cfg.seed`.
pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let outcomes: Vec<_> = (0..cfg.n_replications)
        .into_par_iter()
        .flat_map_iter(|rep| run_replication(cfg, rep))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    let bias = summarize(cfg, &records);
    Ok(MonteCarloReport {
        config: cfg.clone(),
        records,
        bias,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_match_known_functionals() {
        let t = TrueParameters::default();
        let q = TailIndex::new(0.1).unwrap();
        let off = t.error_offset(ErrorFamily::Gaussian, PowerOrder::Quantile, 0, 0, q);
        assert!((off - normal::quantile(0.1)).abs() < 1e-14);
        let med = TailIndex::median();
        for fam in [ErrorFamily::Gaussian, ErrorFamily::StudentT5] {
            assert!(t.error_offset(fam, PowerOrder::Expectile, 1, 1, med).abs() < 1e-9);
        }
        // skew-t expectile at 1/2 is the mean: δ √ν Γ((ν-1)/2) / (√π Γ(ν/2))
        let (delta, _) = skew_delta(&t.omega[0], &t.skew_alpha);
        let mean = delta[1] * 5f64.sqrt() * 1.0 / (std::f64::consts::PI.sqrt() * 1.329_340_388_179_137);
        let got = t.error_offset(ErrorFamily::SkewT5, PowerOrder::Expectile, 0, 1, med);
        assert!((got - mean).abs() < 1e-8, "{got} vs {mean}");
    }

    #[test]
    fn skew_t_margin_integrates_to_one() {
        let m = Margin::SkewT(-1.3);
        assert!((m.cdf(40.0) - 1.0).abs() < 1e-6);
        let total = quadrature::integrate_lower(|x| m.pdf(x), 0.0, 1e-12)
            + quadrature::integrate_upper(|x| m.pdf(x), 0.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scenario_is_reproducible() {
        let cfg = ScenarioConfig::new(ErrorFamily::SkewT5, 50, CopulaFamily::Gaussian, PowerOrder::Quantile);
        assert_eq!(generate_scenario(&cfg, 9).unwrap(), generate_scenario(&cfg, 9).unwrap());
    }
}
