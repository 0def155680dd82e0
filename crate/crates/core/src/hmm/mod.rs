//! Copula quantile / expectile hidden Markov regression.
//!
//! State `k` emits `y_t` with margins from the asymmetric Laplace (`l = 1`) or
//! asymmetric normal (`l = 2`) family, located at `x_t β_{j,k}`, coupled by a
//! state-specific Gaussian or Student-t copula.

mod em;
mod forward_backward;
mod simulate;

pub use em::{evaluate, fit, fit_from, m_step, q_function, FitResult, QTerms};
pub use forward_backward::{decode_map, forward_backward, forward_loglik, Posteriors};
pub use simulate::simulate_from_model;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::copula::{clamp_pseudo, CopulaFamily, CopulaParams};
use crate::data::TimeSeriesDataset;
use crate::distributions::{LocationScale, PowerOrder, TailIndex};
use crate::error::{Error, Result};

/// Estimation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub order: PowerOrder,
    pub n_states: usize,
    pub family: CopulaFamily,
    pub tau: Vec<TailIndex>,
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub const DEFAULT_TOL: f64 = 1e-6;
    pub const DEFAULT_MAX_ITER: usize = 500;
    pub const DEFAULT_N_STARTS: usize = 20;

    pub fn new(order: PowerOrder, n_states: usize, family: CopulaFamily, tau: Vec<TailIndex>) -> Self {
        Self {
            order,
            n_states,
            family,
            tau,
            tol: Self::DEFAULT_TOL,
            max_iter: Self::DEFAULT_MAX_ITER,
            n_starts: Self::DEFAULT_N_STARTS,
            seed: 0,
        }
    }

    /// Same `τ` for every response.
    pub fn uniform_tau(order: PowerOrder, n_states: usize, family: CopulaFamily, tau: TailIndex, d: usize) -> Self {
        Self::new(order, n_states, family, vec![tau; d])
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_starts(mut self, n_starts: usize) -> Self {
        self.n_starts = n_starts;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn dim(&self) -> usize {
        self.tau.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::InvalidParameter("need at least one hidden state".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if self.tau.is_empty() {
            return Err(Error::InvalidParameter("tau vector is empty".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidParameter("need at least one random start".into()));
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, data: &TimeSeriesDataset) -> Result<()> {
        self.validate()?;
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "tau has {} entries, data has {} responses",
                self.dim(),
                data.dim()
            )));
        }
        let need = self.n_states * data.n_covariates();
        if data.n_obs() <= need {
            return Err(Error::InvalidParameter(format!(
                "need more than K*p = {need} observations, have {}",
                data.n_obs()
            )));
        }
        Ok(())
    }
}

/// Full parameter set of the hidden Markov regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParameters {
    /// Initial state distribution (length `K`).
    pub initial: Vec<f64>,
    /// Row-stochastic transition matrix, `transition[j][k] = P(S_{t+1}=k | S_t=j)`.
    pub transition: Vec<Vec<f64>>,
    /// Coefficients indexed `[state][response][covariate]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    /// Scales indexed `[state][response]`.
    pub sigma: Vec<Vec<f64>>,
    pub copula: Vec<CopulaParams>,
}

impl HmmParameters {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.sigma.first().map_or(0, Vec::len)
    }

    pub fn n_covariates(&self) -> usize {
        self.beta
            .first()
            .and_then(|b| b.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        let d = self.dim();
        let p = self.n_covariates();
        let simplex = |v: &[f64], what: &str| -> Result<()> {
            let s: f64 = v.iter().sum();
            if v.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParameter(format!("{what} is not a probability vector")));
            }
            Ok(())
        };
        if k == 0 {
            return Err(Error::InvalidParameter("no states".into()));
        }
        simplex(&self.initial, "initial distribution")?;
        if self.transition.len() != k {
            return Err(Error::DimensionMismatch("transition matrix rows".into()));
        }
        for row in &self.transition {
            if row.len() != k {
                return Err(Error::DimensionMismatch("transition matrix columns".into()));
            }
            simplex(row, "transition row")?;
        }
        if self.beta.len() != k || self.sigma.len() != k || self.copula.len() != k {
            return Err(Error::DimensionMismatch("state-indexed blocks".into()));
        }
        for s in 0..k {
            if self.beta[s].len() != d || self.beta[s].iter().any(|b| b.len() != p) {
                return Err(Error::DimensionMismatch("coefficient block".into()));
            }
            if self.sigma[s].len() != d || self.sigma[s].iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter("scales must be positive".into()));
            }
            if self.copula[s].dim() != d {
                return Err(Error::DimensionMismatch("copula dimension".into()));
            }
        }
        Ok(())
    }

    /// Relabels states so that new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            initial: perm.iter().map(|&i| self.initial[i]).collect(),
            transition: perm
                .iter()
                .map(|&i| perm.iter().map(|&j| self.transition[i][j]).collect())
                .collect(),
            beta: perm.iter().map(|&i| self.beta[i].clone()).collect(),
            sigma: perm.iter().map(|&i| self.sigma[i].clone()).collect(),
            copula: perm.iter().map(|&i| self.copula[i].clone()).collect(),
        }
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let k = self.n_states();
        DMatrix::from_fn(k, k, |i, j| self.transition[i][j])
    }

    #[inline]
    pub(crate) fn location(&self, data_x: &DMatrix<f64>, t: usize, state: usize, j: usize) -> f64 {
        self.beta[state][j]
            .iter()
            .enumerate()
            .map(|(c, b)| data_x[(t, c)] * b)
            .sum()
    }

    pub(crate) fn margin(&self, data_x: &DMatrix<f64>, t: usize, state: usize, j: usize) -> LocationScale {
        LocationScale::new(self.location(data_x, t, state, j), self.sigma[state][j])
            .expect("validated scale")
    }
}

/// Marginal log-density sum and clamped pseudo-observations of row `t` under `state`.
fn margins_row(
    t: usize,
    state: usize,
    params: &HmmParameters,
    data: &TimeSeriesDataset,
    spec: &ModelSpec,
    u: &mut [f64],
) -> f64 {
    let mut lp = 0.0;
    for j in 0..data.dim() {
        let m = params.margin(data.x(), t, state, j);
        let y = data.y()[(t, j)];
        lp += spec.order.logpdf(y, m, spec.tau[j]);
        u[j] = clamp_pseudo(spec.order.cdf(y, m, spec.tau[j]));
    }
    lp
}

/// Joint log-density of `y_t` in `state`: marginal log-densities plus the copula
/// log-density at the marginal cdf values.
pub fn state_logdensity(
    t: usize,
    state: usize,
    params: &HmmParameters,
    data: &TimeSeriesDataset,
    spec: &ModelSpec,
) -> Result<f64> {
    if t >= data.n_obs() || state >= params.n_states() {
        return Err(Error::InvalidParameter(format!("no row {t} / state {state}")));
    }
    if params.dim() != data.dim() || params.n_covariates() != data.n_covariates() {
        return Err(Error::DimensionMismatch("parameters vs dataset".into()));
    }
    let mut u = vec![0.0; data.dim()];
    let lp = margins_row(t, state, params, data, spec, &mut u);
    Ok(lp + params.copula[state].logdensity_clamped(&u))
}

/// `T × K` matrix of state log-densities.
pub fn state_logdensities(params: &HmmParameters, data: &TimeSeriesDataset, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    if params.dim() != data.dim() || params.n_covariates() != data.n_covariates() {
        return Err(Error::DimensionMismatch("parameters vs dataset".into()));
    }
    let (n, k) = (data.n_obs(), params.n_states());
    let mut out = DMatrix::zeros(n, k);
    let mut u = vec![0.0; data.dim()];
    for s in 0..k {
        let cop = &params.copula[s];
        let trivial = data.dim() == 1;
        for t in 0..n {
            let lp = margins_row(t, s, params, data, spec, &mut u);
            out[(t, s)] = if trivial { lp } else { lp + cop.logdensity_clamped(&u) };
        }
    }
    Ok(out)
}

/// Observed-data log-likelihood via the scaled forward pass.
pub fn loglik(data: &TimeSeriesDataset, params: &HmmParameters, spec: &ModelSpec) -> Result<f64> {
    let ld = state_logdensities(params, data, spec)?;
    forward_loglik(&ld, &params.initial, &params.transition_matrix())
}
