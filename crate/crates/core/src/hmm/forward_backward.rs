use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smoothed state and transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `T × K`, `gamma[(t, k)] = P(S_t = k | y)`.
    pub gamma: DMatrix<f64>,
    /// `T - 1` slices of `K × K`, `xi[t][(j, k)] = P(S_t = j, S_{t+1} = k | y)`.
    pub xi: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

impl Posteriors {
    pub fn n_obs(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn state_weights(&self, k: usize) -> Vec<f64> {
        self.gamma.column(k).iter().copied().collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_inputs(logdens: &DMatrix<f64>, initial: &[f64], transition: &DMatrix<f64>) -> Result<()> {
    let k = logdens.ncols();
    if initial.len() != k || transition.nrows() != k || transition.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "{k} states in densities, {} initial probabilities, {}x{} transitions",
            initial.len(),
            transition.nrows(),
            transition.ncols()
        )));
    }
    if logdens.nrows() == 0 {
        return Err(Error::InvalidParameter("empty sequence".into()));
    }
    if logdens.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidParameter("log-densities must be finite".into()));
    }
    Ok(())
}

/// Normalized log-forward variables; returns them with the per-step
/// log-normalizers (their sum is the log-likelihood).
fn forward(logdens: &DMatrix<f64>, log_init: &[f64], log_trans: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, k) = (logdens.nrows(), logdens.ncols());
    let mut alpha = DMatrix::zeros(n, k);
    let mut norms = Vec::with_capacity(n);
    let mut buf = vec![0.0; k];
    let mut terms = vec![0.0; k];
    for t in 0..n {
        for s in 0..k {
            buf[s] = logdens[(t, s)]
                + if t == 0 {
                    log_init[s]
                } else {
                    for j in 0..k {
                        terms[j] = alpha[(t - 1, j)] + log_trans[(j, s)];
                    }
                    log_sum_exp(&terms)
                };
        }
        let c = log_sum_exp(&buf);
        if !c.is_finite() {
            return Err(Error::ImpossibleSequence);
        }
        for s in 0..k {
            alpha[(t, s)] = buf[s] - c;
        }
        norms.push(c);
    }
    Ok((alpha, norms))
}

fn logs(initial: &[f64], transition: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    (initial.iter().map(|p| p.ln()).collect(), transition.map(|p| p.ln()))
}

/// Scaled forward-backward recursions in log space.
pub fn forward_backward(logdens: &DMatrix<f64>, initial: &[f64], transition: &DMatrix<f64>) -> Result<Posteriors> {
    check_inputs(logdens, initial, transition)?;
    let (n, k) = (logdens.nrows(), logdens.ncols());
    let (log_init, log_trans) = logs(initial, transition);
    let (alpha, norms) = forward(logdens, &log_init, &log_trans)?;

    // log backward variables scaled by the same normalizers as the forward pass
    let mut beta = DMatrix::zeros(n, k);
    let mut terms = vec![0.0; k];
    for t in (0..n.saturating_sub(1)).rev() {
        for j in 0..k {
            for s in 0..k {
                terms[s] = log_trans[(j, s)] + logdens[(t + 1, s)] + beta[(t + 1, s)];
            }
            beta[(t, j)] = log_sum_exp(&terms) - norms[t + 1];
        }
    }

    let mut gamma = DMatrix::zeros(n, k);
    for t in 0..n {
        for s in 0..k {
            terms[s] = alpha[(t, s)] + beta[(t, s)];
        }
        let z = log_sum_exp(&terms);
        for s in 0..k {
            gamma[(t, s)] = (terms[s] - z).exp();
        }
    }

    let mut xi = Vec::with_capacity(n.saturating_sub(1));
    let mut cell = vec![0.0; k * k];
    for t in 0..n.saturating_sub(1) {
        for j in 0..k {
            for s in 0..k {
                cell[j * k + s] = alpha[(t, j)] + log_trans[(j, s)] + logdens[(t + 1, s)] + beta[(t + 1, s)];
            }
        }
        let z = log_sum_exp(&cell);
        xi.push(DMatrix::from_fn(k, k, |j, s| (cell[j * k + s] - z).exp()));
    }

    Ok(Posteriors {
        gamma,
        xi,
        loglik: norms.iter().sum(),
    })
}

/// Log-likelihood from the forward pass alone.
pub fn forward_loglik(logdens: &DMatrix<f64>, initial: &[f64], transition: &DMatrix<f64>) -> Result<f64> {
    check_inputs(logdens, initial, transition)?;
    let (log_init, log_trans) = logs(initial, transition);
    let (_, norms) = forward(logdens, &log_init, &log_trans)?;
    Ok(norms.iter().sum())
}

/// Per-row argmax of `gamma`; ties go to the lower state index.
pub fn decode_map(posteriors: &Posteriors) -> Vec<usize> {
    let g = &posteriors.gamma;
    (0..g.nrows())
        .map(|t| {
            let mut best = 0;
            for s in 1..g.ncols() {
                if g[(t, s)] > g[(t, best)] {
                    best = s;
                }
            }
            best
        })
        .collect()
}
