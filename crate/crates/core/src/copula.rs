//! Gaussian and Student-t copulas with full correlation matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::{normal, student_t};

/// Pseudo-observations are clamped to `[PSEUDO_EPS, 1 - PSEUDO_EPS]` before
/// being mapped through an inverse cdf.
pub const PSEUDO_EPS: f64 = 1e-10;
/// Eigenvalue floor applied by [`pd_repair`].
pub const EIGEN_FLOOR: f64 = 1e-8;
/// Smallest eigenvalue accepted for a valid correlation matrix.
const MIN_EIGEN: f64 = 1e-10;

/// Lower end of the degrees-of-freedom search bracket (exclusive).
pub const NU_MIN: f64 = 2.0;
/// Upper end of the degrees-of-freedom search bracket (inclusive).
pub const NU_MAX: f64 = 300.0;
const NU_TOL: f64 = 1e-3;

const T_SCALE_TOL: f64 = 1e-8;
const T_SCALE_MAX_SWEEPS: usize = 100;

#[inline]
pub fn clamp_pseudo(u: f64) -> f64 {
    u.clamp(PSEUDO_EPS, 1.0 - PSEUDO_EPS)
}

/// Symmetric, unit-diagonal, strictly positive definite matrix with its
/// Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl PartialEq for CorrelationMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl CorrelationMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for i in 0..d {
            if (matrix[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "diagonal entry {i} is {} (expected 1)",
                    matrix[(i, i)]
                )));
            }
            for j in 0..i {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                if (a - b).abs() > 1e-12 || !a.is_finite() {
                    return Err(Error::InvalidParameter("matrix is not symmetric".into()));
                }
                if a.abs() >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "off-diagonal entry ({i},{j}) = {a} outside (-1, 1)"
                    )));
                }
            }
        }
        let mut matrix = matrix;
        for i in 0..d {
            matrix[(i, i)] = 1.0;
            for j in 0..i {
                let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        if d > 1 && min_eigenvalue(&matrix) <= MIN_EIGEN {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            matrix,
            chol,
            log_det,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is a valid correlation matrix")
    }

    /// Equicorrelation matrix with common off-diagonal `rho`.
    pub fn equicorrelated(d: usize, rho: f64) -> Result<Self> {
        let mut m = DMatrix::from_element(d, d, rho);
        m.fill_diagonal(1.0);
        Self::new(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("correlation rows must be square".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.matrix.row(i).iter().copied().collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `zᵀ R⁻¹ z`.
    pub fn mahalanobis(&self, z: &[f64]) -> f64 {
        let mut v = DVector::from_column_slice(z);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        v.norm_squared()
    }

    /// Simultaneous permutation of rows and columns.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.matrix[(perm[i], perm[j])]
        });
        Self::new(m).expect("permutation preserves validity")
    }
}

impl Serialize for CorrelationMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CorrelationMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Self::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaFamily {
    Gaussian,
    StudentT,
}

impl CopulaFamily {
    /// Free parameters of one state's copula in dimension `d`.
    pub fn n_params(self, d: usize) -> usize {
        let corr = d * (d - 1) / 2;
        match self {
            Self::Gaussian => corr,
            Self::StudentT => corr + 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::StudentT => "student_t",
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "student_t" | "t" | "student-t" => Ok(Self::StudentT),
            other => Err(Error::InvalidParameter(format!("unknown copula family '{other}'"))),
        }
    }
}

/// State-specific copula parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CopulaParams {
    Gaussian { corr: CorrelationMatrix },
    StudentT { corr: CorrelationMatrix, nu: f64 },
}

impl CopulaParams {
    pub fn gaussian(corr: CorrelationMatrix) -> Self {
        Self::Gaussian { corr }
    }

    pub fn student_t(corr: CorrelationMatrix, nu: f64) -> Result<Self> {
        if !(nu > NU_MIN) || !nu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t copula degrees of freedom must exceed 2, got {nu}"
            )));
        }
        Ok(Self::StudentT { corr, nu })
    }

    pub fn family(&self) -> CopulaFamily {
        match self {
            Self::Gaussian { .. } => CopulaFamily::Gaussian,
            Self::StudentT { .. } => CopulaFamily::StudentT,
        }
    }

    pub fn corr(&self) -> &CorrelationMatrix {
        match self {
            Self::Gaussian { corr } | Self::StudentT { corr, .. } => corr,
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match self {
            Self::Gaussian { .. } => None,
            Self::StudentT { nu, .. } => Some(*nu),
        }
    }

    pub fn dim(&self) -> usize {
        self.corr().dim()
    }

    /// Log copula density at a row of (already clamped) pseudo-observations.
    pub fn logdensity_clamped(&self, u: &[f64]) -> f64 {
        match self {
            Self::Gaussian { corr } => {
                let z: Vec<f64> = u.iter().map(|&v| normal::quantile(v)).collect();
                gaussian_logdensity_z(&z, corr)
            }
            Self::StudentT { corr, nu } => {
                let z: Vec<f64> = u.iter().map(|&v| student_t::quantile(v, *nu)).collect();
                t_logdensity_z(&z, corr, *nu)
            }
        }
    }

    /// Log copula density; rejects rows on the boundary of the unit cube.
    pub fn logdensity(&self, u: &[f64]) -> Result<f64> {
        match self {
            Self::Gaussian { corr } => gaussian_copula_logdensity(u, corr),
            Self::StudentT { corr, nu } => t_copula_logdensity(u, corr, *nu),
        }
    }
}

/// `T × d` matrix of marginal cdf values, every entry strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations(DMatrix<f64>);

impl PseudoObservations {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::ProbabilityOutOfRange(*bad));
        }
        Ok(Self(u))
    }

    /// Builds pseudo-observations by clamping every entry into the interior.
    pub fn clamped(mut u: DMatrix<f64>) -> Self {
        u.apply(|v| *v = clamp_pseudo(*v));
        Self(u)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.0.row(t).iter().copied().collect()
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    fn normal_scores(&self) -> DMatrix<f64> {
        self.0.map(|v| normal::quantile(clamp_pseudo(v)))
    }

    fn t_scores(&self, nu: f64) -> DMatrix<f64> {
        self.0.map(|v| student_t::quantile(clamp_pseudo(v), nu))
    }
}

fn check_row(u: &[f64], corr: &CorrelationMatrix) -> Result<()> {
    if u.len() != corr.dim() {
        return Err(Error::DimensionMismatch(format!(
            "pseudo-observation has {} entries, correlation matrix is {}x{}",
            u.len(),
            corr.dim(),
            corr.dim()
        )));
    }
    match u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        Some(&bad) => Err(Error::ProbabilityOutOfRange(bad)),
        None => Ok(()),
    }
}

/// `-½ log|R| - ½ zᵀ(R⁻¹ - I)z` with `z = Φ⁻¹(u)`.
pub fn gaussian_copula_logdensity(u: &[f64], corr: &CorrelationMatrix) -> Result<f64> {
    check_row(u, corr)?;
    let z: Vec<f64> = u.iter().map(|&v| normal::quantile(clamp_pseudo(v))).collect();
    Ok(gaussian_logdensity_z(&z, corr))
}

pub(crate) fn gaussian_logdensity_z(z: &[f64], corr: &CorrelationMatrix) -> f64 {
    let zz: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * corr.log_det() - 0.5 * (corr.mahalanobis(z) - zz)
}

/// Multivariate-t log-density at `z = Ψ⁻¹(u; ν)` minus the univariate-t
/// log-densities of its coordinates.
pub fn t_copula_logdensity(u: &[f64], corr: &CorrelationMatrix, nu: f64) -> Result<f64> {
    check_row(u, corr)?;
    if !(nu > NU_MIN) {
        return Err(Error::InvalidParameter(format!(
            "t copula degrees of freedom must exceed 2, got {nu}"
        )));
    }
    let z: Vec<f64> = u
        .iter()
        .map(|&v| student_t::quantile(clamp_pseudo(v), nu))
        .collect();
    Ok(t_logdensity_z(&z, corr, nu))
}

pub(crate) fn t_logdensity_z(z: &[f64], corr: &CorrelationMatrix, nu: f64) -> f64 {
    let d = z.len() as f64;
    let joint = ln_gamma(0.5 * (nu + d))
        - ln_gamma(0.5 * nu)
        - 0.5 * d * (nu * std::f64::consts::PI).ln()
        - 0.5 * corr.log_det()
        - 0.5 * (nu + d) * (corr.mahalanobis(z) / nu).ln_1p();
    let margins: f64 = z.iter().map(|&x| student_t::logpdf(x, nu)).sum();
    joint - margins
}

fn check_weights(n: usize, d: usize, w: &[f64]) -> Result<f64> {
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} observations",
            w.len(),
            n
        )));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if total < d as f64 {
        return Err(Error::DegenerateInput {
            effective: total,
            dim: d,
        });
    }
    Ok(total)
}

/// Kish effective sample size `(Σw)² / Σw²`.
fn effective_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Weighted second moment `Σ w_t s_t z_t z_tᵀ / Σ w_t`.
fn weighted_scatter(z: &DMatrix<f64>, w: &[f64], extra: Option<&[f64]>, total: f64) -> DMatrix<f64> {
    let d = z.ncols();
    let mut m = DMatrix::zeros(d, d);
    for t in 0..z.nrows() {
        let wt = w[t] * extra.map_or(1.0, |s| s[t]);
        if wt == 0.0 {
            continue;
        }
        for i in 0..d {
            let zi = z[(t, i)] * wt;
            for j in 0..=i {
                m[(i, j)] += zi * z[(t, j)];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
    m / total
}

/// Rescales a covariance-like matrix to unit diagonal.
fn to_unit_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let s: Vec<f64> = (0..d).map(|i| m[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { m[(i, j)] / (s[i] * s[j]) })
}

/// Weighted Gaussian-copula correlation estimate from normal scores.
pub fn fit_gaussian_weighted(u: &PseudoObservations, w: &[f64]) -> Result<CorrelationMatrix> {
    let total = check_weights(u.nrows(), u.dim(), w)?;
    Ok(gaussian_from_scores(&u.normal_scores(), w, total))
}

fn gaussian_from_scores(z: &DMatrix<f64>, w: &[f64], total: f64) -> CorrelationMatrix {
    let d = z.ncols();
    if d == 1 {
        return CorrelationMatrix::identity(1);
    }
    if effective_size(w) < d as f64 {
        return CorrelationMatrix::identity(d);
    }
    pd_repair(&to_unit_diagonal(&weighted_scatter(z, w, None, total)))
}

/// Maximizer of the weighted Gaussian-copula log-likelihood over unit-diagonal
/// correlation matrices, reached by Newton ascent on the off-diagonal entries
/// from the [`fit_gaussian_weighted`] estimate.
pub fn fit_gaussian_weighted_mle(u: &PseudoObservations, w: &[f64]) -> Result<CorrelationMatrix> {
    let total = check_weights(u.nrows(), u.dim(), w)?;
    let z = u.normal_scores();
    let start = gaussian_from_scores(&z, w, total);
    if u.dim() == 1 || effective_size(w) < u.dim() as f64 {
        return Ok(start);
    }
    Ok(gaussian_mle_refine(&weighted_scatter(&z, w, None, total), start))
}

const MLE_MAX_ITER: usize = 50;
const MLE_GRAD_TOL: f64 = 1e-11;

/// `-log|R| - tr(R⁻¹ S)`, or `None` outside the positive definite cone.
fn gaussian_profile(r: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let chol = Cholesky::new(r.clone())?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    Some((-log_det - (&inv * s).trace(), inv))
}

fn gaussian_mle_refine(s: &DMatrix<f64>, start: CorrelationMatrix) -> CorrelationMatrix {
    let d = s.nrows();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).collect();
    let m = pairs.len();
    let mut r = start.matrix().clone();
    let Some((mut f, mut p)) = gaussian_profile(&r, s) else {
        return start;
    };
    for _ in 0..MLE_MAX_ITER {
        let psp = &p * s * &p;
        let grad = DVector::from_fn(m, |i, _| {
            let (a, b) = pairs[i];
            2.0 * (psp[(a, b)] - p[(a, b)])
        });
        if grad.amax() < MLE_GRAD_TOL {
            break;
        }
        // A_i = P E_i with E_i the symmetric unit perturbation of pair i
        let a_mats: Vec<DMatrix<f64>> = pairs
            .iter()
            .map(|&(a, b)| {
                let mut e = DMatrix::zeros(d, d);
                e[(a, b)] = 1.0;
                e[(b, a)] = 1.0;
                &p * e
            })
            .collect();
        let ps = &p * s;
        let mut neg_hess = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let aij = &a_mats[i] * &a_mats[j];
                let aji = &a_mats[j] * &a_mats[i];
                let h = aji.trace() - (&aji * &ps).trace() - (&aij * &ps).trace();
                neg_hess[(i, j)] = -h;
                neg_hess[(j, i)] = -h;
            }
        }
        let step = match Cholesky::new(neg_hess) {
            Some(c) => c.solve(&grad),
            None => grad.clone(),
        };
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut cand = r.clone();
            for (i, &(a, b)) in pairs.iter().enumerate() {
                cand[(a, b)] += scale * step[i];
                cand[(b, a)] = cand[(a, b)];
            }
            if min_eigenvalue(&cand) >= EIGEN_FLOOR {
                if let Some((fc, pc)) = gaussian_profile(&cand, s) {
                    if fc >= f {
                        r = cand;
                        f = fc;
                        p = pc;
                        moved = true;
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        if !moved {
            break;
        }
    }
    CorrelationMatrix::new(r).unwrap_or(start)
}

/// Weighted scale-matrix EM for a zero-mean multivariate t at fixed `nu`,
/// run to inner convergence.
pub fn fit_t_weighted(u: &PseudoObservations, w: &[f64], nu: f64) -> Result<CorrelationMatrix> {
    let total = check_weights(u.nrows(), u.dim(), w)?;
    if !(nu > NU_MIN) {
        return Err(Error::InvalidParameter(format!(
            "t copula degrees of freedom must exceed 2, got {nu}"
        )));
    }
    Ok(t_scale_from_scores(&u.t_scores(nu), w, nu, total))
}

fn t_scale_from_scores(z: &DMatrix<f64>, w: &[f64], nu: f64, total: f64) -> CorrelationMatrix {
    let (n, d) = (z.nrows(), z.ncols());
    if d == 1 {
        return CorrelationMatrix::identity(1);
    }
    if effective_size(w) < d as f64 {
        return CorrelationMatrix::identity(d);
    }
    let mut corr = pd_repair(&to_unit_diagonal(&weighted_scatter(z, w, None, total)));
    let mut row = vec![0.0; d];
    let mut s = vec![0.0; n];
    for _ in 0..T_SCALE_MAX_SWEEPS {
        for t in 0..n {
            for j in 0..d {
                row[j] = z[(t, j)];
            }
            s[t] = (nu + d as f64) / (nu + corr.mahalanobis(&row));
        }
        let next = pd_repair(&to_unit_diagonal(&weighted_scatter(z, w, Some(&s), total)));
        let delta = (next.matrix() - corr.matrix()).abs().max();
        corr = next;
        if delta < T_SCALE_TOL {
            break;
        }
    }
    corr
}

/// Result of the degrees-of-freedom profile search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuProfile {
    pub nu: f64,
    /// Set when the optimum sits on the upper bracket, i.e. the data show no
    /// detectable tail dependence beyond the Gaussian copula.
    pub at_upper_bound: bool,
}

/// Weighted t-copula log-likelihood as a function of `nu` at fixed `R`.
pub fn weighted_t_objective(u: &PseudoObservations, w: &[f64], corr: &CorrelationMatrix, nu: f64) -> f64 {
    let z = u.t_scores(nu);
    let d = z.ncols();
    let mut row = vec![0.0; d];
    let mut acc = 0.0;
    for t in 0..z.nrows() {
        if w[t] == 0.0 {
            continue;
        }
        for j in 0..d {
            row[j] = z[(t, j)];
        }
        acc += w[t] * t_logdensity_z(&row, corr, nu);
    }
    acc
}

/// Golden-section maximization of the weighted t-copula log-likelihood over
/// `nu ∈ (2, 300]`.
pub fn profile_nu(u: &PseudoObservations, w: &[f64], corr: &CorrelationMatrix) -> Result<NuProfile> {
    check_weights(u.nrows(), u.dim(), w)?;
    if corr.dim() != u.dim() {
        return Err(Error::DimensionMismatch("correlation / data dimension".into()));
    }
    let objective = |nu: f64| weighted_t_objective(u, w, corr, nu);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (NU_MIN + NU_TOL, NU_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let (mut fc, mut fe) = (objective(c), objective(e));
    while b - a > NU_TOL {
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = objective(e);
        }
    }
    let mid = 0.5 * (a + b);
    let nu = if objective(NU_MAX) >= objective(mid) { NU_MAX } else { mid };
    Ok(NuProfile {
        nu,
        at_upper_bound: NU_MAX - nu <= 10.0 * NU_TOL,
    })
}

/// Clips eigenvalues below [`EIGEN_FLOOR`], rebuilds the matrix and rescales
/// it to unit diagonal. A final shrink toward the identity keeps the floor
/// after rescaling.
pub fn pd_repair(m: &DMatrix<f64>) -> CorrelationMatrix {
    let d = m.nrows();
    let sym = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    if d == 1 {
        return CorrelationMatrix::identity(1);
    }
    let unit = to_unit_diagonal(&sym);
    if min_eigenvalue(&unit) >= EIGEN_FLOOR {
        if let Ok(c) = CorrelationMatrix::new(unit.clone()) {
            return c;
        }
    }
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let mut unit = to_unit_diagonal(&rebuilt);
    let lambda = min_eigenvalue(&unit);
    if lambda < EIGEN_FLOOR {
        let alpha = (EIGEN_FLOOR - lambda) / (1.0 - lambda) * (1.0 + 1e-6);
        unit = unit * (1.0 - alpha) + DMatrix::identity(d, d) * alpha;
        unit.fill_diagonal(1.0);
    }
    CorrelationMatrix::new(unit).expect("repaired matrix satisfies the correlation invariants")
}

/// Draws `n` rows from the copula.
pub fn sample_copula<R: Rng + ?Sized>(params: &CopulaParams, n: usize, rng: &mut R) -> PseudoObservations {
    let d = params.dim();
    let l = params.corr().cholesky_lower();
    let chi = params.nu().map(|nu| ChiSquared::new(nu).expect("nu > 2"));
    let mut out = DMatrix::zeros(n, d);
    let mut eps = DVector::zeros(d);
    for t in 0..n {
        for j in 0..d {
            eps[j] = rng.sample::<f64, _>(StandardNormal);
        }
        let z = &l * &eps;
        match (params, &chi) {
            (CopulaParams::StudentT { nu, .. }, Some(chi)) => {
                let scale = (chi.sample(rng) / nu).sqrt();
                for j in 0..d {
                    out[(t, j)] = student_t::cdf(z[j] / scale, *nu);
                }
            }
            _ => {
                for j in 0..d {
                    out[(t, j)] = normal::cdf(z[j]);
                }
            }
        }
    }
    out.apply(|v| *v = v.clamp(1e-300, 1.0 - 1e-16));
    PseudoObservations(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rho2(r: f64) -> CorrelationMatrix {
        CorrelationMatrix::equicorrelated(2, r).unwrap()
    }

    #[test]
    fn identity_gives_zero_logdensity() {
        for d in 1..5 {
            let u: Vec<f64> = (0..d).map(|i| 0.1 + 0.2 * i as f64).collect();
            let v = gaussian_copula_logdensity(&u, &CorrelationMatrix::identity(d)).unwrap();
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_at_center_is_half_log_det() {
        let v = gaussian_copula_logdensity(&[0.5, 0.5], &rho2(0.5)).unwrap();
        assert!((v + 0.5 * 0.75f64.ln()).abs() < 1e-12);
        assert!((v - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn t_copula_univariate_is_uniform() {
        let r = CorrelationMatrix::identity(1);
        for &u in &[0.01, 0.3, 0.77] {
            for &nu in &[2.5, 7.0, 80.0] {
                assert!(t_copula_logdensity(&[u], &r, nu).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn t_copula_gaussian_limit() {
        let v = t_copula_logdensity(&[0.2, 0.8], &CorrelationMatrix::identity(2), 1e6).unwrap();
        assert!(v.abs() < 1e-3);
    }

    #[test]
    fn rejects_boundary_and_invalid_matrices() {
        assert!(gaussian_copula_logdensity(&[0.0, 0.5], &rho2(0.2)).is_err());
        assert!(t_copula_logdensity(&[0.5, 1.0], &rho2(0.2), 4.0).is_err());
        assert!(CorrelationMatrix::equicorrelated(2, 1.0).is_err());
        assert!(CorrelationMatrix::equicorrelated(3, -0.6).is_err());
        assert!(CopulaParams::student_t(rho2(0.1), 2.0).is_err());
    }

    #[test]
    fn pd_repair_is_identity_on_valid_matrices() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.0, 0.5, -0.2, 0.5, 1.0]);
        let r = pd_repair(&m);
        assert!((r.matrix() - &m).abs().max() < 1e-12);
    }

    #[test]
    fn pd_repair_fixes_boundary_and_rank_deficient_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0000001, 1.0000001, 1.0]);
        let r = pd_repair(&m);
        assert!(r.get(0, 1) < 1.0);
        let ones = DMatrix::from_element(3, 3, 1.0);
        let r = pd_repair(&ones);
        assert!(min_eigenvalue(r.matrix()) >= EIGEN_FLOOR);
        for i in 0..3 {
            assert_eq!(r.get(i, i), 1.0);
        }
    }

    #[test]
    fn weighted_gaussian_fit_is_scale_invariant_and_matches_sample_correlation() {
        let params = CopulaParams::gaussian(rho2(0.4));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = sample_copula(&params, 500, &mut rng);
        let ones = vec![1.0; 500];
        let threes = vec![3.0; 500];
        let a = fit_gaussian_weighted(&u, &ones).unwrap();
        let b = fit_gaussian_weighted(&u, &threes).unwrap();
        assert!((a.matrix() - b.matrix()).abs().max() < 1e-12);
        let z = u.normal_scores();
        let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
        for t in 0..500 {
            s11 += z[(t, 0)] * z[(t, 0)];
            s22 += z[(t, 1)] * z[(t, 1)];
            s12 += z[(t, 0)] * z[(t, 1)];
        }
        assert!((a.get(0, 1) - s12 / (s11 * s22).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn comonotone_rows_push_correlation_to_one() {
        let u = PseudoObservations::new(DMatrix::from_fn(50, 2, |t, _| (t as f64 + 0.5) / 50.0)).unwrap();
        let r = fit_gaussian_weighted(&u, &vec![1.0; 50]).unwrap();
        assert!(r.get(0, 1) > 0.999_999 && r.get(0, 1) < 1.0);
    }

    #[test]
    fn too_little_weight_is_degenerate() {
        let u = PseudoObservations::new(DMatrix::from_element(5, 3, 0.4)).unwrap();
        let err = fit_gaussian_weighted(&u, &[0.5, 0.5, 0.5, 0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput { .. }));
    }

    #[test]
    fn single_row_weight_falls_back_to_independence() {
        let params = CopulaParams::gaussian(rho2(0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = sample_copula(&params, 40, &mut rng);
        let mut w = vec![0.0; 40];
        w[17] = 100.0;
        let r = fit_t_weighted(&u, &w, 5.0).unwrap();
        assert_eq!(r, CorrelationMatrix::identity(2));
    }

    #[test]
    fn sampling_is_reproducible() {
        let params = CopulaParams::student_t(rho2(0.3), 4.0).unwrap();
        let a = sample_copula(&params, 20, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_copula(&params, 20, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }

    #[test]
    fn logdensity_is_permutation_invariant() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.0, 0.5, -0.2, 0.5, 1.0]);
        let r = CorrelationMatrix::new(m).unwrap();
        let perm = [2, 0, 1];
        let rp = r.permuted(&perm);
        let u = [0.1, 0.62, 0.9];
        let up: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
        let g = gaussian_copula_logdensity(&u, &r).unwrap();
        let gp = gaussian_copula_logdensity(&up, &rp).unwrap();
        assert!((g - gp).abs() < 1e-12);
        let t = t_copula_logdensity(&u, &r, 4.5).unwrap();
        let tp = t_copula_logdensity(&up, &rp, 4.5).unwrap();
        assert!((t - tp).abs() < 1e-12);
    }
}
