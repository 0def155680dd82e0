use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::forward_backward::{decode_map, forward_backward, Posteriors};
use super::{state_logdensities, HmmParameters, ModelSpec};
use crate::copula::{
    fit_gaussian_weighted, fit_gaussian_weighted_mle, fit_t_weighted, profile_nu, CopulaFamily, CopulaParams,
    CorrelationMatrix, PseudoObservations,
};
use crate::data::TimeSeriesDataset;
use crate::distributions::{asymmetric_loss, LocationScale, PowerOrder, TailIndex};
use crate::error::{Error, Result};
use crate::regression::WeightedRegressionProblem;

const SIGMA_FLOOR: f64 = 1e-12;
const INITIAL_NU: f64 = 5.0;
const MAX_HALVINGS: usize = 20;

/// Outcome of a multi-start EM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: HmmParameters,
    pub posteriors: Posteriors,
    /// Observed log-likelihood after every E-step, starting from the initial values.
    pub ll_trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    /// 0-based MAP state per time point.
    pub decoded_states: Vec<usize>,
    pub start_index: usize,
    /// Starts that were aborted, with the reason.
    pub failed_starts: Vec<(usize, String)>,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        self.posteriors.loglik
    }

    /// Share of EM steps whose log-likelihood did not drop by more than
    /// `1e-8 · max(1, |ℓ|)`.
    pub fn monotone_fraction(&self) -> f64 {
        monotone_fraction(&self.ll_trace)
    }
}

pub(crate) fn monotone_fraction(trace: &[f64]) -> f64 {
    if trace.len() < 2 {
        return 1.0;
    }
    let ok = trace
        .windows(2)
        .filter(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0))
        .count();
    ok as f64 / (trace.len() - 1) as f64
}

/// Terms of the expected complete-data log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct QTerms {
    pub initial: f64,
    pub transition: f64,
    /// Indexed `[state][response]`.
    pub margins: Vec<Vec<f64>>,
    pub copula: Vec<f64>,
}

impl QTerms {
    pub fn total(&self) -> f64 {
        self.initial
            + self.transition
            + self.margins.iter().flatten().sum::<f64>()
            + self.copula.iter().sum::<f64>()
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Expected complete-data log-likelihood of `params` under fixed posteriors,
/// split by parameter block.
pub fn q_function(
    data: &TimeSeriesDataset,
    spec: &ModelSpec,
    posteriors: &Posteriors,
    params: &HmmParameters,
) -> Result<QTerms> {
    let k = params.n_states();
    let (n, d) = (data.n_obs(), data.dim());
    let g = &posteriors.gamma;
    let initial = (0..k).map(|s| xlogy(g[(0, s)], params.initial[s])).sum();
    let mut transition = 0.0;
    for xi in &posteriors.xi {
        for i in 0..k {
            for j in 0..k {
                transition += xlogy(xi[(i, j)], params.transition[i][j]);
            }
        }
    }
    let mut margins = vec![vec![0.0; d]; k];
    let mut copula = vec![0.0; k];
    let mut u = vec![0.0; d];
    for s in 0..k {
        for t in 0..n {
            let w = g[(t, s)];
            for j in 0..d {
                let m = params.margin(data.x(), t, s, j);
                let y = data.y()[(t, j)];
                margins[s][j] += w * spec.order.logpdf(y, m, spec.tau[j]);
                u[j] = crate::copula::clamp_pseudo(spec.order.cdf(y, m, spec.tau[j]));
            }
            if w > 0.0 {
                copula[s] += w * params.copula[s].logdensity_clamped(&u);
            }
        }
    }
    Ok(QTerms {
        initial,
        transition,
        margins,
        copula,
    })
}

/// Closed-form scale update from weighted losses.
fn scale_update(order: PowerOrder, weighted_loss: f64, total: f64) -> f64 {
    let s = match order {
        PowerOrder::Quantile => weighted_loss / total,
        PowerOrder::Expectile => (2.0 * weighted_loss / total).sqrt(),
    };
    s.max(SIGMA_FLOOR)
}

/// Margin fit for one (state, response) pair: coefficients then scale.
fn fit_margin(
    data: &TimeSeriesDataset,
    order: PowerOrder,
    j: usize,
    w: &[f64],
    loc_tau: TailIndex,
    loss_tau: TailIndex,
) -> Result<(Vec<f64>, f64)> {
    let y = data.response_column(j);
    let prob = WeightedRegressionProblem::new(data.x(), &y, w, loc_tau)?;
    let coef = prob.fit(order)?.coef;
    let total: f64 = w.iter().sum();
    let loss: f64 = (0..y.len())
        .map(|t| {
            let r = y[t] - (0..coef.len()).map(|c| data.x()[(t, c)] * coef[c]).sum::<f64>();
            w[t] * asymmetric_loss(r, order, loss_tau)
        })
        .sum();
    Ok((coef, scale_update(order, loss, total)))
}

fn pseudo_observations(
    data: &TimeSeriesDataset,
    spec: &ModelSpec,
    beta: &[Vec<f64>],
    sigma: &[f64],
) -> PseudoObservations {
    let (n, d) = (data.n_obs(), data.dim());
    let x = data.x();
    let u = DMatrix::from_fn(n, d, |t, j| {
        let mu = (0..beta[j].len()).map(|c| x[(t, c)] * beta[j][c]).sum();
        let m = LocationScale::new(mu, sigma[j]).expect("positive scale");
        spec.order.cdf(data.y()[(t, j)], m, spec.tau[j])
    });
    PseudoObservations::clamped(u)
}

fn fit_copula(
    family: CopulaFamily,
    u: &PseudoObservations,
    w: &[f64],
    current_nu: Option<f64>,
) -> Result<CopulaParams> {
    match family {
        CopulaFamily::Gaussian => Ok(CopulaParams::gaussian(fit_gaussian_weighted_mle(u, w)?)),
        CopulaFamily::StudentT => {
            let nu = current_nu.unwrap_or(INITIAL_NU);
            let corr = fit_t_weighted(u, w, nu)?;
            let nu = if u.dim() == 1 { nu } else { profile_nu(u, w, &corr)?.nu };
            CopulaParams::student_t(corr, nu)
        }
    }
}

/// One IFM M-step: chain parameters, then margins per state, then copulas on
/// pseudo-observations at the updated margins.
pub fn m_step(
    data: &TimeSeriesDataset,
    spec: &ModelSpec,
    posteriors: &Posteriors,
    current: &HmmParameters,
) -> Result<HmmParameters> {
    let k = current.n_states();
    let (n, d, p) = (data.n_obs(), data.dim(), data.n_covariates());
    let g = &posteriors.gamma;
    if g.nrows() != n || g.ncols() != k {
        return Err(Error::DimensionMismatch("posteriors vs dataset".into()));
    }

    let first_sum: f64 = (0..k).map(|s| g[(0, s)]).sum();
    let initial: Vec<f64> = (0..k).map(|s| g[(0, s)] / first_sum).collect();

    let mut counts = DMatrix::zeros(k, k);
    for xi in &posteriors.xi {
        counts += xi;
    }
    let transition: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let row_sum: f64 = counts.row(i).sum();
            if row_sum > 0.0 {
                (0..k).map(|j| counts[(i, j)] / row_sum).collect()
            } else {
                current.transition[i].clone()
            }
        })
        .collect();

    let mut beta = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut copula = Vec::with_capacity(k);
    for s in 0..k {
        let w: Vec<f64> = g.column(s).iter().copied().collect();
        let weight: f64 = w.iter().sum();
        let required = (p + 1) as f64;
        if weight < required {
            return Err(Error::DegenerateState { state: s, weight, required });
        }
        let mut b = Vec::with_capacity(d);
        let mut sg = Vec::with_capacity(d);
        for j in 0..d {
            let (coef, scale) = fit_margin(data, spec.order, j, &w, spec.tau[j], spec.tau[j])?;
            b.push(coef);
            sg.push(scale);
        }
        let u = pseudo_observations(data, spec, &b, &sg);
        copula.push(fit_copula(spec.family, &u, &w, current.copula[s].nu())?);
        beta.push(b);
        sigma.push(sg);
    }
    Ok(HmmParameters {
        initial,
        transition,
        beta,
        sigma,
        copula,
    })
}

/// Starting values from a uniform random partition of the time points.
fn initial_parameters<R: Rng>(data: &TimeSeriesDataset, spec: &ModelSpec, rng: &mut R) -> Result<HmmParameters> {
    let k = spec.n_states;
    let (n, d, p) = (data.n_obs(), data.dim(), data.n_covariates());
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();

    let mut counts = vec![vec![0.0; k]; k];
    for w in labels.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    let transition = counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|c| c / total).collect()
            } else {
                vec![1.0 / k as f64; k]
            }
        })
        .collect();

    let mut beta = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut copula = Vec::with_capacity(k);
    for s in 0..k {
        let w: Vec<f64> = labels.iter().map(|&l| if l == s { 1.0 } else { 0.0 }).collect();
        let weight: f64 = w.iter().sum();
        if weight < (p + 1) as f64 {
            return Err(Error::DegenerateState {
                state: s,
                weight,
                required: (p + 1) as f64,
            });
        }
        let mut b = Vec::with_capacity(d);
        let mut sg = Vec::with_capacity(d);
        for j in 0..d {
            let (coef, scale) = fit_margin(data, spec.order, j, &w, TailIndex::median(), spec.tau[j])?;
            b.push(coef);
            sg.push(scale);
        }
        let u = pseudo_observations(data, spec, &b, &sg);
        let corr = fit_gaussian_weighted(&u, &w)?;
        copula.push(match spec.family {
            CopulaFamily::Gaussian => CopulaParams::gaussian(corr),
            CopulaFamily::StudentT => CopulaParams::student_t(corr, INITIAL_NU)?,
        });
        beta.push(b);
        sigma.push(sg);
    }
    Ok(HmmParameters {
        initial: vec![1.0 / k as f64; k],
        transition,
        beta,
        sigma,
        copula,
    })
}

fn e_step(data: &TimeSeriesDataset, spec: &ModelSpec, params: &HmmParameters) -> Result<Posteriors> {
    let ld = state_logdensities(params, data, spec)?;
    forward_backward(&ld, &params.initial, &params.transition_matrix())
}

fn state_block(q: &QTerms, s: usize) -> f64 {
    q.margins[s].iter().sum::<f64>() + q.copula[s]
}

fn blend_state(current: &HmmParameters, proposal: &mut HmmParameters, s: usize, lambda: f64) -> Result<()> {
    let mix = |a: f64, b: f64| a + lambda * (b - a);
    for (j, row) in proposal.beta[s].iter_mut().enumerate() {
        for (c, b) in row.iter_mut().enumerate() {
            *b = mix(current.beta[s][j][c], *b);
        }
        proposal.sigma[s][j] = mix(current.sigma[s][j], proposal.sigma[s][j]);
    }
    let corr = current.copula[s].corr().matrix() * (1.0 - lambda) + proposal.copula[s].corr().matrix() * lambda;
    let corr = CorrelationMatrix::new(corr)?;
    proposal.copula[s] = match (current.copula[s].nu(), proposal.copula[s].nu()) {
        (Some(a), Some(b)) => CopulaParams::student_t(corr, mix(a, b))?,
        _ => CopulaParams::gaussian(corr),
    };
    Ok(())
}

/// The sequential margin-then-copula update can lower the expected
/// complete-data log-likelihood of a state. Such states are moved back toward
/// their current values by step halving (the last resort being no move at
/// all), which keeps every iteration an ascent step. Chain parameters are
/// exact maximizers and always taken from the proposal.
fn ascent_safeguard(
    data: &TimeSeriesDataset,
    spec: &ModelSpec,
    post: &Posteriors,
    current: &HmmParameters,
    proposal: HmmParameters,
) -> Result<HmmParameters> {
    let k = current.n_states();
    let q_now = q_function(data, spec, post, current)?;
    let target: Vec<f64> = (0..k).map(|s| state_block(&q_now, s)).collect();
    let full = proposal.clone();
    let mut candidate = proposal;
    let mut lambda = vec![1.0; k];
    let mut pending: Vec<usize> = (0..k).collect();
    for round in 0..=MAX_HALVINGS {
        let q = q_function(data, spec, post, &candidate)?;
        pending.retain(|&s| !(state_block(&q, s) >= target[s]));
        if pending.is_empty() {
            break;
        }
        for &s in &pending {
            lambda[s] = if round + 1 == MAX_HALVINGS { 0.0 } else { 0.5 * lambda[s] };
            candidate.beta[s] = full.beta[s].clone();
            candidate.sigma[s] = full.sigma[s].clone();
            candidate.copula[s] = full.copula[s].clone();
            blend_state(current, &mut candidate, s, lambda[s])?;
        }
    }
    Ok(candidate)
}

struct StartOutcome {
    params: HmmParameters,
    posteriors: Posteriors,
    trace: Vec<f64>,
    converged: bool,
    n_iter: usize,
}

/// EM from given starting values. Returns the iterate with the highest
/// observed log-likelihood, so the result never scores below the start.
fn run_em(data: &TimeSeriesDataset, spec: &ModelSpec, start: HmmParameters) -> Result<StartOutcome> {
    let mut params = start;
    let mut post = e_step(data, spec, &params)?;
    let mut trace = vec![post.loglik];
    let mut best = (params.clone(), post.clone());
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < spec.max_iter {
        let proposal = m_step(data, spec, &post, &params)?;
        let next = ascent_safeguard(data, spec, &post, &params, proposal)?;
        let next_post = e_step(data, spec, &next)?;
        n_iter += 1;
        let delta = next_post.loglik - post.loglik;
        trace.push(next_post.loglik);
        params = next;
        post = next_post;
        if post.loglik > best.1.loglik {
            best = (params.clone(), post.clone());
        }
        if delta.abs() < spec.tol {
            converged = true;
            break;
        }
    }
    Ok(StartOutcome {
        params: best.0,
        posteriors: best.1,
        trace,
        converged,
        n_iter,
    })
}

/// EM from a single start seeded by `seed`.
fn run_start(data: &TimeSeriesDataset, spec: &ModelSpec, seed: u64) -> Result<StartOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = initial_parameters(data, spec, &mut rng)?;
    run_em(data, spec, start)
}

/// Multi-start EM. Start `i` is seeded with `spec.seed + i`; the start with the
/// highest log-likelihood wins, ties going to the lower index.
pub fn fit(data: &TimeSeriesDataset, spec: &ModelSpec) -> Result<FitResult> {
    spec.check_data(data)?;
    let outcomes: Vec<Result<StartOutcome>> = (0..spec.n_starts)
        .into_par_iter()
        .map(|i| run_start(data, spec, spec.seed.wrapping_add(i as u64)))
        .collect();

    let mut failed = Vec::new();
    let mut best: Option<(usize, StartOutcome)> = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| o.posteriors.loglik > b.posteriors.loglik);
                if better {
                    best = Some((i, o));
                }
            }
            Err(e) => failed.push((i, e.to_string())),
        }
    }
    let Some((start_index, o)) = best else {
        return Err(Error::AllStartsFailed {
            starts: spec.n_starts,
            last: failed.last().map(|f| f.1.clone()).unwrap_or_default(),
        });
    };
    let decoded_states = decode_map(&o.posteriors);
    Ok(FitResult {
        params: o.params,
        posteriors: o.posteriors,
        ll_trace: o.trace,
        converged: o.converged,
        n_iter: o.n_iter,
        decoded_states,
        start_index,
        failed_starts: failed,
    })
}

/// Smoothing and decoding at fixed parameters, packaged as a zero-iteration
/// fit (used to decode or bootstrap a saved model).
pub fn evaluate(data: &TimeSeriesDataset, spec: &ModelSpec, params: HmmParameters) -> Result<FitResult> {
    spec.check_data(data)?;
    params.validate()?;
    let posteriors = e_step(data, spec, &params)?;
    Ok(FitResult {
        decoded_states: decode_map(&posteriors),
        ll_trace: vec![posteriors.loglik],
        params,
        posteriors,
        converged: true,
        n_iter: 0,
        start_index: 0,
        failed_starts: Vec::new(),
    })
}

/// EM from user-supplied starting values, bypassing the random starts.
pub fn fit_from(data: &TimeSeriesDataset, spec: &ModelSpec, start: HmmParameters) -> Result<FitResult> {
    spec.check_data(data)?;
    start.validate()?;
    let o = run_em(data, spec, start)?;
    let decoded_states = decode_map(&o.posteriors);
    Ok(FitResult {
        params: o.params,
        posteriors: o.posteriors,
        ll_trace: o.trace,
        converged: o.converged,
        n_iter: o.n_iter,
        decoded_states,
        start_index: 0,
        failed_starts: Vec::new(),
    })
}
