use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{HmmParameters, ModelSpec};
use crate::copula::{clamp_pseudo, sample_copula};
use crate::error::{Error, Result};

/// Draws a hidden path and responses on the supplied design `x` (`T × p`).
/// Returns the `T × d` responses and the 0-based state path.
pub fn simulate_from_model<R: Rng + ?Sized>(
    params: &HmmParameters,
    spec: &ModelSpec,
    x: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    params.validate()?;
    if x.ncols() != params.n_covariates() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, coefficients {}",
            x.ncols(),
            params.n_covariates()
        )));
    }
    if spec.dim() != params.dim() {
        return Err(Error::DimensionMismatch("tau vs parameter dimension".into()));
    }
    let (n, d, k) = (x.nrows(), params.dim(), params.n_states());
    let bad = |_| Error::InvalidParameter("probability vector".into());
    let init = WeightedIndex::new(&params.initial).map_err(bad)?;
    let rows: Vec<WeightedIndex<f64>> = params
        .transition
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(bad))
        .collect::<Result<_>>()?;

    let mut states: Vec<usize> = Vec::with_capacity(n);
    for t in 0..n {
        let s = if t == 0 { init.sample(rng) } else { rows[states[t - 1]].sample(rng) };
        states.push(s);
    }

    let mut y = DMatrix::zeros(n, d);
    for t in 0..n {
        let s = states[t];
        debug_assert!(s < k);
        let u = sample_copula(&params.copula[s], 1, rng);
        for j in 0..d {
            let m = params.margin(x, t, s, j);
            y[(t, j)] = spec.order.quantile(clamp_pseudo(u.matrix()[(0, j)]), m, spec.tau[j])?;
        }
    }
    Ok((y, states))
}
