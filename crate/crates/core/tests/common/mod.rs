#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 20-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [(f64, f64); 10] = [
    (0.076_526_521_133_497_33, 0.152_753_387_130_725_85),
    (0.227_785_851_141_645_08, 0.149_172_986_472_603_75),
    (0.373_706_088_715_419_56, 0.142_096_109_318_382_05),
    (0.510_867_001_950_827_1, 0.131_688_638_449_176_63),
    (0.636_053_680_726_515_1, 0.118_194_531_961_518_42),
    (0.746_331_906_460_150_8, 0.101_930_119_817_240_44),
    (0.839_116_971_822_218_8, 0.083_276_741_576_704_75),
    (0.912_234_428_251_326, 0.062_672_048_334_109_06),
    (0.963_971_927_277_913_8, 0.040_601_429_800_386_94),
    (0.993_128_599_185_094_9, 0.017_614_007_139_152_12),
];

/// Composite 20-point Gauss-Legendre rule over `panels` equal panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let mid = a + (i as f64 + 0.5) * h;
        let half = 0.5 * h;
        for &(x, w) in &GL_NODES {
            total += w * (f(mid - half * x) + f(mid + half * x));
        }
    }
    total * 0.5 * h
}

/// Integral over the real line with panels clustered near the origin through
/// `x = s / (1 - s²)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, centre: f64, panels: usize) -> f64 {
    let g = |s: f64| {
        let one = 1.0 - s * s;
        f(centre + s / one) * (1.0 + s * s) / (one * one)
    };
    gauss_legendre(g, -1.0, 1.0, panels)
}

/// Tensor-product Gauss-Legendre over `[a, b]²`.
pub fn gauss_legendre_2d<F: Fn(f64, f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    gauss_legendre(|x| gauss_legendre(|y| f(x, y), a, b, panels), a, b, panels)
}

/// Exhaustive enumeration of all `K^T` hidden paths.
pub struct PathOracle {
    pub gamma: DMatrix<f64>,
    pub xi: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

pub fn enumerate_paths(logdens: &DMatrix<f64>, initial: &[f64], transition: &DMatrix<f64>) -> PathOracle {
    let (n, k) = (logdens.nrows(), logdens.ncols());
    let total_paths = k.pow(n as u32);
    let mut joint = Vec::with_capacity(total_paths);
    let mut paths = Vec::with_capacity(total_paths);
    for code in 0..total_paths {
        let mut path = vec![0; n];
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % k;
            c /= k;
        }
        let mut p = initial[path[0]] * logdens[(0, path[0])].exp();
        for t in 1..n {
            p *= transition[(path[t - 1], path[t])] * logdens[(t, path[t])].exp();
        }
        joint.push(p);
        paths.push(path);
    }
    let z: f64 = joint.iter().sum();
    let mut gamma = DMatrix::zeros(n, k);
    let mut xi = vec![DMatrix::zeros(k, k); n - 1];
    for (p, path) in joint.iter().zip(&paths) {
        for t in 0..n {
            gamma[(t, path[t])] += p / z;
        }
        for t in 0..n - 1 {
            xi[t][(path[t], path[t + 1])] += p / z;
        }
    }
    PathOracle {
        gamma,
        xi,
        loglik: z.ln(),
    }
}

/// Random row-stochastic matrix.
pub fn random_stochastic<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(k, k, |_, _| rng.random_range(0.05..1.0));
    for i in 0..k {
        let s: f64 = m.row(i).sum();
        for j in 0..k {
            m[(i, j)] /= s;
        }
    }
    m
}

pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

/// Minimum of `Σ w_t ρ_τ(y_t - x_t β)` over all basic solutions: every subset
/// of `p` rows with a nonsingular design block yields an interpolating
/// candidate, and a linear program attains its optimum at such a vertex.
pub fn quantile_vertex_oracle(x: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64) -> f64 {
    let (n, p) = (x.nrows(), x.ncols());
    let objective = |beta: &[f64]| -> f64 {
        (0..n)
            .map(|t| {
                let fit: f64 = (0..p).map(|c| x[(t, c)] * beta[c]).sum();
                w[t] * check_loss(y[t] - fit, tau)
            })
            .sum()
    };
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let a = DMatrix::from_fn(p, p, |i, j| x[(idx[i], j)]);
        let b = nalgebra::DVector::from_fn(p, |i, _| y[idx[i]]);
        if a.determinant().abs() > 1e-10 {
            if let Some(sol) = a.lu().solve(&b) {
                best = best.min(objective(sol.as_slice()));
            }
        }
        // next combination
        let mut i = p;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - p + i {
                idx[i] += 1;
                for j in i + 1..p {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Pair-counting Rand statistics by direct enumeration of all pairs.
pub fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let pairs = both + only_a + only_b + neither;
    let same_a = both + only_a;
    let same_b = both + only_b;
    let expected = same_a * same_b / pairs;
    let max = 0.5 * (same_a + same_b);
    (both - expected) / (max - expected)
}

/// Standard normal cdf, independent of the crate's implementation.
pub fn phi(x: f64) -> f64 {
    0.5 * libm_erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function: Maclaurin series of erf near zero, Laplace
/// continued fraction in the tails.
fn libm_erfc(x: f64) -> f64 {
    if x.abs() < 2.0 {
        // Maclaurin series of erf
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        return 1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum;
    }
    // continued fraction for the tail
    let ax = x.abs();
    let mut f = 0.0;
    for k in (1..200).rev() {
        f = (k as f64 / 2.0) / (ax + f);
    }
    let tail = (-ax * ax).exp() / std::f64::consts::PI.sqrt() / (ax + f);
    if x > 0.0 {
        tail
    } else {
        2.0 - tail
    }
}
