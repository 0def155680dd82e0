//! Information criteria, partition agreement, parametric bootstrap and
//! model selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::data::TimeSeriesDataset;
use crate::distributions::TailIndex;
use crate::error::{Error, Result};
use crate::hmm::{fit, simulate_from_model, FitResult, HmmParameters, ModelSpec, Posteriors};

pub const BOOTSTRAP_STARTS: usize = 5;

/// Free parameters: per state `d·p` coefficients, `d` scales, `d(d-1)/2`
/// correlations and one `ν` for the t copula; `K-1` initial and `K(K-1)`
/// transition probabilities.
pub fn count_params(n_states: usize, family: CopulaFamily, d: usize, p: usize) -> usize {
    let k = n_states;
    let per_state = d * p + d + family.n_params(d);
    k * per_state + (k - 1) + k * (k - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub icl: f64,
    pub n_params: usize,
    pub loglik: f64,
    pub n_obs: usize,
}

/// `-Σ_t Σ_k γ_t(k) ln γ_t(k)` with `0 ln 0 = 0`.
pub fn classification_entropy(posteriors: &Posteriors) -> f64 {
    -posteriors
        .gamma
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| g * g.ln())
        .sum::<f64>()
}

/// AIC, BIC and the entropy-penalized ICL (`BIC + 2·entropy`).
pub fn information_criteria(loglik: f64, n_params: usize, posteriors: &Posteriors) -> InformationCriteria {
    let n_obs = posteriors.n_obs();
    let m = n_params as f64;
    let aic = -2.0 * loglik + 2.0 * m;
    let bic = -2.0 * loglik + m * (n_obs as f64).ln();
    InformationCriteria {
        aic,
        bic,
        icl: bic + 2.0 * classification_entropy(posteriors),
        n_params,
        loglik,
        n_obs,
    }
}

pub fn fit_criteria(fit: &FitResult, spec: &ModelSpec, data: &TimeSeriesDataset) -> InformationCriteria {
    let n_params = count_params(spec.n_states, spec.family, data.dim(), data.n_covariates());
    information_criteria(fit.loglik(), n_params, &fit.posteriors)
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Pair-counting adjusted Rand index (Hubert–Arabie).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} labels", a.len(), b.len())));
    }
    let n = a.len() as u64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let rows: Vec<u64> = (0..ka).map(|i| table[i * kb..(i + 1) * kb].iter().sum()).collect();
    let cols: Vec<u64> = (0..kb).map(|j| (0..ka).map(|i| table[i * kb + j]).sum()).collect();
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| current[j] > current[i - 1]).expect("successor exists");
        current.swap(i - 1, j);
        current[i..].reverse();
    }
}

/// Permutation `perm` (new state `i` = estimated state `perm[i]`) maximizing
/// the number of time points where relabeled estimates match `truth`.
pub fn best_agreement_permutation(estimated: &[usize], truth: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![vec![0usize; k]; k];
    for (&e, &t) in estimated.iter().zip(truth) {
        if e < k && t < k {
            counts[t][e] += 1;
        }
    }
    let mut best = (0..k).collect::<Vec<_>>();
    let mut best_score = 0;
    for (idx, perm) in permutations(k).into_iter().enumerate() {
        let score: usize = (0..k).map(|i| counts[i][perm[i]]).sum();
        if idx == 0 || score > best_score {
            best_score = score;
            best = perm;
        }
    }
    best
}

/// Permutation (new state `i` = candidate state `perm[i]`) minimizing the
/// squared distance to `reference` over scales and coefficients, each margin
/// standardized by the reference scale.
pub fn parameter_alignment(candidate: &HmmParameters, reference: &HmmParameters) -> Vec<usize> {
    let k = reference.n_states();
    let state_cost = |c: usize, r: usize| -> f64 {
        let mut acc = 0.0;
        for (j, &s_ref) in reference.sigma[r].iter().enumerate() {
            let scale = s_ref.max(1e-12);
            acc += ((candidate.sigma[c][j] - s_ref) / scale).powi(2);
            for (b, b_ref) in candidate.beta[c][j].iter().zip(&reference.beta[r][j]) {
                acc += ((b - b_ref) / scale).powi(2);
            }
        }
        acc
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let c: f64 = (0..k).map(|i| state_cost(perm[i], i)).sum();
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, perm));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Flattened numeric blocks of the parameter set, in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBlocks {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub beta: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    /// Full correlation matrices per state.
    pub correlation: Vec<Vec<Vec<f64>>>,
    pub nu: Option<Vec<f64>>,
}

impl ParameterBlocks {
    pub fn from_params(p: &HmmParameters) -> Self {
        let nu: Vec<Option<f64>> = p.copula.iter().map(|c| c.nu()).collect();
        Self {
            initial: p.initial.clone(),
            transition: p.transition.clone(),
            beta: p.beta.clone(),
            sigma: p.sigma.clone(),
            correlation: p.copula.iter().map(|c| c.corr().to_rows()).collect(),
            nu: nu.iter().all(Option::is_some).then(|| nu.iter().flatten().copied().collect()),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = self.initial.clone();
        v.extend(self.transition.iter().flatten());
        v.extend(self.beta.iter().flatten().flatten());
        v.extend(self.sigma.iter().flatten());
        v.extend(self.correlation.iter().flatten().flatten());
        if let Some(nu) = &self.nu {
            v.extend(nu);
        }
        v
    }

    fn refill(&self, values: &[f64]) -> Self {
        let mut it = values.iter().copied();
        let mut next = || it.next().expect("shape preserved");
        Self {
            initial: self.initial.iter().map(|_| next()).collect(),
            transition: self.transition.iter().map(|r| r.iter().map(|_| next()).collect()).collect(),
            beta: self
                .beta
                .iter()
                .map(|s| s.iter().map(|r| r.iter().map(|_| next()).collect()).collect())
                .collect(),
            sigma: self.sigma.iter().map(|r| r.iter().map(|_| next()).collect()).collect(),
            correlation: self
                .correlation
                .iter()
                .map(|s| s.iter().map(|r| r.iter().map(|_| next()).collect()).collect())
                .collect(),
            nu: self.nu.as_ref().map(|n| n.iter().map(|_| next()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    /// Standard deviation of each parameter across successful replicates.
    pub se: ParameterBlocks,
    pub replicates: usize,
    pub n_failed: usize,
    /// State permutation applied to each successful replicate, in replicate order.
    pub alignment: Vec<Vec<usize>>,
    /// Set when at least half the replicates failed.
    pub unreliable: bool,
}

/// Parametric bootstrap: simulate at the fitted parameters on the observed
/// design, refit with [`BOOTSTRAP_STARTS`] starts, align states to the fit and
/// take per-parameter standard deviations.
pub fn bootstrap_se(
    fitted: &FitResult,
    data: &TimeSeriesDataset,
    spec: &ModelSpec,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one bootstrap replicate".into()));
    }
    let base = ParameterBlocks::from_params(&fitted.params);
    let outcomes: Vec<Option<(Vec<usize>, Vec<f64>)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let (y, _) = simulate_from_model(&fitted.params, spec, data.x(), &mut rng).ok()?;
            let sample = data.with_responses(y).ok()?;
            let refit_spec = spec
                .clone()
                .with_starts(BOOTSTRAP_STARTS)
                .with_seed(seed.wrapping_add(1_000_003u64.wrapping_mul(r as u64 + 1)));
            let refit = fit(&sample, &refit_spec).ok().filter(|f| f.converged)?;
            let perm = parameter_alignment(&refit.params, &fitted.params);
            let aligned = ParameterBlocks::from_params(&refit.params.permuted(&perm));
            Some((perm, aligned.flatten()))
        })
        .collect();

    let successes: Vec<(Vec<usize>, Vec<f64>)> = outcomes.into_iter().flatten().collect();
    let n_failed = replicates - successes.len();
    let width = base.flatten().len();
    let m = successes.len() as f64;
    let se: Vec<f64> = (0..width)
        .map(|i| {
            if successes.len() < 2 {
                return f64::NAN;
            }
            let mean = successes.iter().map(|s| s.1[i]).sum::<f64>() / m;
            (successes.iter().map(|s| (s.1[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapReport {
        se: base.refill(&se),
        replicates,
        n_failed,
        alignment: successes.into_iter().map(|s| s.0).collect(),
        unreliable: 2 * n_failed >= replicates,
    })
}

/// One cell of the selection grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCell {
    pub n_states: usize,
    pub family: CopulaFamily,
    pub criteria: Option<InformationCriteria>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub cells: Vec<SelectionCell>,
    /// Index into `cells` of the minimum of each criterion.
    pub best_aic: Option<usize>,
    pub best_bic: Option<usize>,
    pub best_icl: Option<usize>,
}

fn argmin<F: Fn(&InformationCriteria) -> f64>(cells: &[SelectionCell], key: F) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in cells.iter().enumerate() {
        if let Some(ic) = &c.criteria {
            let v = key(ic);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|b| b.0)
}

/// Fits every `(K, family)` pair with all `τ_j = 0.5`. Failed cells keep their
/// error message and do not stop the grid.
pub fn select_model(
    data: &TimeSeriesDataset,
    k_grid: &[usize],
    family_grid: &[CopulaFamily],
    template: &ModelSpec,
) -> SelectionTable {
    let grid: Vec<(usize, CopulaFamily)> = k_grid
        .iter()
        .flat_map(|&k| family_grid.iter().map(move |&f| (k, f)))
        .collect();
    let cells: Vec<SelectionCell> = grid
        .par_iter()
        .map(|&(k, family)| {
            let spec = ModelSpec {
                n_states: k,
                family,
                tau: vec![TailIndex::median(); data.dim()],
                ..template.clone()
            };
            match fit(data, &spec) {
                Ok(f) => SelectionCell {
                    n_states: k,
                    family,
                    criteria: Some(fit_criteria(&f, &spec, data)),
                    error: None,
                },
                Err(e) => SelectionCell {
                    n_states: k,
                    family,
                    criteria: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    SelectionTable {
        best_aic: argmin(&cells, |c| c.aic),
        best_bic: argmin(&cells, |c| c.bic),
        best_icl: argmin(&cells, |c| c.icl),
        cells,
    }
}
