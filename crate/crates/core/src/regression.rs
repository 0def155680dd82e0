//! Weighted linear quantile and expectile regression.
//!
//! Quantile fits run a majorize-minimize pass on an `ε`-smoothed check loss
//! (with `ε` decayed from 1e-2 to 1e-9 of the residual scale) and then walk the
//! vertices of the underlying linear program until no edge direction descends.
//! Expectile fits use iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{asymmetric_loss, PowerOrder, TailIndex};
use crate::error::{Error, Result};

/// Rows with smaller weight are dropped before any factorization.
pub const MIN_ROW_WEIGHT: f64 = 1e-12;

const EXPECTILE_TOL: f64 = 1e-10;
const EXPECTILE_MAX_ITER: usize = 200;

/// A weighted regression of `y` on the rows of `x`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedRegressionProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub w: &'a [f64],
    pub tau: TailIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub coef: Vec<f64>,
    /// `Σ w_t ω(y_t - x_t β)` at the returned coefficients.
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `coef` is then the best iterate.
    pub converged: bool,
}

impl<'a> WeightedRegressionProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a [f64], w: &'a [f64], tau: TailIndex) -> Result<Self> {
        if x.nrows() != y.len() || y.len() != w.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response {}, weights {}",
                x.nrows(),
                y.len(),
                w.len()
            )));
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        Ok(Self { x, y, w, tau })
    }

    pub fn objective(&self, order: PowerOrder, coef: &[f64]) -> f64 {
        (0..self.y.len())
            .map(|t| self.w[t] * asymmetric_loss(self.y[t] - dot_row(self.x, t, coef), order, self.tau))
            .sum()
    }

    /// Dispatches to the solver matching `order`.
    pub fn fit(&self, order: PowerOrder) -> Result<RegressionFit> {
        match order {
            PowerOrder::Quantile => weighted_quantile_fit(self),
            PowerOrder::Expectile => weighted_expectile_fit(self),
        }
    }

    fn support(&self) -> Result<Support> {
        let rows: Vec<usize> = (0..self.y.len()).filter(|&t| self.w[t] >= MIN_ROW_WEIGHT).collect();
        if rows.is_empty() {
            return Err(Error::ZeroWeights);
        }
        let p = self.x.ncols();
        let x = DMatrix::from_fn(rows.len(), p, |i, j| self.x[(rows[i], j)]);
        let rank = x.clone().svd(false, false).rank(1e-10 * col_scale(&x));
        if rank < p {
            return Err(Error::RankDeficient { rank, cols: p });
        }
        let y = rows.iter().map(|&t| self.y[t]).collect();
        let w = rows.iter().map(|&t| self.w[t]).collect();
        Ok(Support { x, y, w })
    }
}

/// Rows of the problem with non-negligible weight.
struct Support {
    x: DMatrix<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Support {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn residuals(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|t| self.y[t] - dot_row(&self.x, t, coef)).collect()
    }

    fn objective(&self, order: PowerOrder, tau: TailIndex, coef: &[f64]) -> f64 {
        self.residuals(coef)
            .iter()
            .zip(&self.w)
            .map(|(&r, &w)| w * asymmetric_loss(r, order, tau))
            .sum()
    }

    /// Solves `Σ a_t x_t x_tᵀ β = Σ a_t x_t y_t + shift`.
    fn weighted_least_squares(&self, a: &[f64], shift: Option<&DVector<f64>>) -> Result<Vec<f64>> {
        let p = self.x.ncols();
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwy = DVector::zeros(p);
        for t in 0..self.n() {
            let at = a[t];
            if at == 0.0 {
                continue;
            }
            for i in 0..p {
                let xi = self.x[(t, i)] * at;
                xtwy[i] += xi * self.y[t];
                for j in 0..=i {
                    xtwx[(i, j)] += xi * self.x[(t, j)];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                xtwx[(j, i)] = xtwx[(i, j)];
            }
        }
        if let Some(s) = shift {
            xtwy += s;
        }
        let sol = match xtwx.clone().cholesky() {
            Some(ch) => ch.solve(&xtwy),
            None => xtwx
                .lu()
                .solve(&xtwy)
                .ok_or(Error::RankDeficient { rank: p.saturating_sub(1), cols: p })?,
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::RankDeficient { rank: p.saturating_sub(1), cols: p });
        }
        Ok(sol.iter().copied().collect())
    }
}

#[inline]
fn dot_row(x: &DMatrix<f64>, t: usize, coef: &[f64]) -> f64 {
    coef.iter().enumerate().map(|(j, b)| x[(t, j)] * b).sum()
}

fn col_scale(x: &DMatrix<f64>) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0) * (x.nrows().max(1) as f64).sqrt()
}

/// Weighted linear quantile regression: minimizes `Σ w_t ω_{1,τ}(y_t - x_t β)`.
pub fn weighted_quantile_fit(prob: &WeightedRegressionProblem<'_>) -> Result<RegressionFit> {
    let sup = prob.support()?;
    let tau = prob.tau;
    let t = tau.get();
    let p = sup.x.ncols();
    let n = sup.n();

    let mut coef = sup.weighted_least_squares(&sup.w, None)?;
    let mut iterations = 0;
    let scale = {
        let r = sup.residuals(&coef);
        let tot: f64 = sup.w.iter().sum();
        let s = r.iter().zip(&sup.w).map(|(r, w)| r.abs() * w).sum::<f64>() / tot;
        if s > 0.0 { s } else { 1.0 }
    };

    // Majorize-minimize on the smoothed loss: |r| ≤ r²/(2c) + c/2 with c = |r_k| + ε.
    let xw_sum: DVector<f64> = {
        let mut v = DVector::zeros(p);
        for i in 0..n {
            for j in 0..p {
                v[j] += sup.w[i] * sup.x[(i, j)];
            }
        }
        v
    };
    let shift = xw_sum * (2.0 * t - 1.0);
    let mut a = vec![0.0; n];
    let mut eps_rel = 1e-2;
    while eps_rel >= 1e-9 * 0.999 {
        let eps = eps_rel * scale;
        for _ in 0..25 {
            iterations += 1;
            let r = sup.residuals(&coef);
            for i in 0..n {
                a[i] = sup.w[i] / (r[i].abs() + eps);
            }
            let next = match sup.weighted_least_squares(&a, Some(&shift)) {
                Ok(c) => c,
                Err(_) => break,
            };
            let step = next
                .iter()
                .zip(&coef)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            coef = next;
            if step <= eps * 1e-3 {
                break;
            }
        }
        eps_rel *= 0.1;
    }

    let (coef, polish_iter, converged) = vertex_polish(&sup, tau, coef)?;
    iterations += polish_iter;
    let objective = prob.objective(PowerOrder::Quantile, &coef);
    Ok(RegressionFit {
        coef,
        objective,
        iterations,
        converged,
    })
}

/// Picks `p` linearly independent rows in the given order of preference.
fn choose_basis(x: &DMatrix<f64>, order: &[usize]) -> Option<Vec<usize>> {
    let p = x.ncols();
    let mut basis: Vec<usize> = Vec::with_capacity(p);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    for &t in order {
        let row = DVector::from_iterator(p, x.row(t).iter().copied());
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone();
        for q in &ortho {
            v -= q * q.dot(&row);
        }
        let vn = v.norm();
        if vn > 1e-8 * norm {
            ortho.push(v / vn);
            basis.push(t);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

/// Exchange descent over the vertices of the check-loss linear program,
/// starting from the vertex interpolating the smallest residuals of `start`.
fn vertex_polish(sup: &Support, tau: TailIndex, start: Vec<f64>) -> Result<(Vec<f64>, usize, bool)> {
    let t = tau.get();
    let n = sup.n();
    let p = sup.x.ncols();
    let start_obj = sup.objective(PowerOrder::Quantile, tau, &start);

    let r0 = sup.residuals(&start);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r0[a].abs().total_cmp(&r0[b].abs()).then(a.cmp(&b)));
    let Some(mut basis) = choose_basis(&sup.x, &order) else {
        return Ok((start, 0, false));
    };

    let solve_vertex = |basis: &[usize]| -> Option<(Vec<f64>, DMatrix<f64>)> {
        let xb = DMatrix::from_fn(p, p, |i, j| sup.x[(basis[i], j)]);
        let yb = DVector::from_iterator(p, basis.iter().map(|&i| sup.y[i]));
        let inv = xb.try_inverse()?;
        let beta = &inv * yb;
        Some((beta.iter().copied().collect(), inv))
    };
    let Some((mut coef, mut inv)) = solve_vertex(&basis) else {
        return Ok((start, 0, false));
    };
    let yscale = sup.y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let zero_tol = 1e-11 * yscale;
    let wsum: f64 = sup.w.iter().sum();
    let slope_tol = 1e-12 * wsum;

    let max_iter = 50 + 20 * n;
    let mut converged = false;
    let mut iterations = 0;
    let mut in_basis = vec![false; n];
    for &b in &basis {
        in_basis[b] = true;
    }
    let mut delta = vec![0.0; n];
    while iterations < max_iter {
        iterations += 1;
        let r = sup.residuals(&coef);

        // Steepest of the 2p edge directions leaving the current vertex.
        let mut best: Option<(f64, usize, f64)> = None;
        for (i, _) in basis.iter().enumerate() {
            for sigma in [1.0, -1.0] {
                // Edge direction d with x_b d = 0 for other basis rows and x_i d = -sigma.
                let mut slope = sup.w[basis[i]] * if sigma > 0.0 { t } else { 1.0 - t };
                for s in 0..n {
                    if in_basis[s] {
                        continue;
                    }
                    let xd: f64 = (0..p).map(|j| sup.x[(s, j)] * inv[(j, i)]).sum::<f64>() * -sigma;
                    let ds = -xd;
                    slope += sup.w[s] * side_slope(r[s], ds, t, zero_tol);
                }
                if slope < -slope_tol && best.is_none_or(|(b, _, _)| slope < b) {
                    best = Some((slope, i, sigma));
                }
            }
        }
        let Some((slope0, leave, sigma)) = best else {
            converged = true;
            break;
        };

        // Exact line search on the piecewise-linear objective along the edge.
        let dir: Vec<f64> = (0..p).map(|j| -sigma * inv[(j, leave)]).collect();
        for s in 0..n {
            delta[s] = -dot_row(&sup.x, s, &dir);
        }
        let mut breaks: Vec<(f64, usize)> = (0..n)
            .filter(|&s| !in_basis[s] && r[s].abs() > zero_tol && delta[s] != 0.0 && r[s] * delta[s] < 0.0)
            .map(|s| (-r[s] / delta[s], s))
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut slope = slope0;
        let mut step = None;
        for &(s_break, s) in &breaks {
            slope += sup.w[s] * delta[s].abs();
            if slope >= -slope_tol {
                step = Some((s_break, s));
                break;
            }
        }
        let Some((step_len, entering)) = step else {
            break;
        };
        let mut next_basis = basis.clone();
        next_basis[leave] = entering;
        let Some((next_coef, next_inv)) = solve_vertex(&next_basis) else {
            let _ = step_len;
            break;
        };
        in_basis[basis[leave]] = false;
        in_basis[entering] = true;
        basis = next_basis;
        coef = next_coef;
        inv = next_inv;
    }

    let polished = sup.objective(PowerOrder::Quantile, tau, &coef);
    if polished <= start_obj {
        Ok((coef, iterations, converged))
    } else {
        Ok((start, iterations, false))
    }
}

/// One-sided derivative of `ρ_τ(r + s·δ)` at `s = 0⁺`.
#[inline]
fn side_slope(r: f64, delta: f64, t: f64, zero_tol: f64) -> f64 {
    if r > zero_tol {
        t * delta
    } else if r < -zero_tol {
        (t - 1.0) * delta
    } else if delta > 0.0 {
        t * delta
    } else {
        (t - 1.0) * delta
    }
}

/// Weighted linear expectile regression by IRLS.
///
/// On hitting the iteration cap the best iterate is returned with
/// `converged == false`.
pub fn weighted_expectile_fit(prob: &WeightedRegressionProblem<'_>) -> Result<RegressionFit> {
    let sup = prob.support()?;
    let tau = prob.tau;
    let n = sup.n();
    let mut coef = sup.weighted_least_squares(&sup.w, None)?;
    let mut best = (sup.objective(PowerOrder::Expectile, tau, &coef), coef.clone());
    let mut a = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < EXPECTILE_MAX_ITER {
        iterations += 1;
        let r = sup.residuals(&coef);
        for t in 0..n {
            a[t] = sup.w[t] * tau.side_weight(r[t]);
        }
        let next = sup.weighted_least_squares(&a, None)?;
        let scale = coef.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let step = next.iter().zip(&coef).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        coef = next;
        let obj = sup.objective(PowerOrder::Expectile, tau, &coef);
        if obj <= best.0 {
            best = (obj, coef.clone());
        }
        if step < EXPECTILE_TOL * scale {
            converged = true;
            break;
        }
    }
    let coef = if converged { coef } else { best.1 };
    let objective = prob.objective(PowerOrder::Expectile, &coef);
    Ok(RegressionFit {
        coef,
        objective,
        iterations,
        converged,
    })
}
