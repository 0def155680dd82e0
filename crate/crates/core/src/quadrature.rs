//! Adaptive Gauss-Kronrod integration, used for distribution functionals
//! without closed forms.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    (k * h, (k - g).abs() * h)
}

const MAX_INTERVALS: usize = 2000;

/// `∫_a^b f` by globally adaptive bisection of the interval with the largest
/// error estimate, until the summed estimate drops below
/// `max(tol, 1e-14 |∫ f|)` or the interval budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (k, e) = kronrod(&f, a, b);
    let mut parts = vec![(a, b, k, e)];
    let mut total = k;
    let mut error = e;
    while error > tol.max(1e-14 * total.abs()) && parts.len() < MAX_INTERVALS {
        let worst = (0..parts.len())
            .max_by(|&i, &j| parts[i].3.total_cmp(&parts[j].3))
            .expect("non-empty");
        let (lo, hi, k0, e0) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (kl, el) = kronrod(&f, lo, mid);
        let (kr, er) = kronrod(&f, mid, hi);
        total += kl + kr - k0;
        error += el + er - e0;
        parts.push((lo, mid, kl, el));
        parts.push((mid, hi, kr, er));
    }
    parts.iter().map(|p| p.2).sum()
}

/// `∫_a^∞ f` through the map `x = a + s / (1 - s)`.
pub fn integrate_upper<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> f64 {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let one = 1.0 - s;
        f(a + s / one) / (one * one)
    };
    integrate(g, 0.0, 1.0, tol)
}

/// `∫_{-∞}^b f`.
pub fn integrate_lower<F: Fn(f64) -> f64>(f: F, b: f64, tol: f64) -> f64 {
    integrate_upper(|x| f(-x), -b, tol)
}

/// Bisection root of a monotone function on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol {
            return mid;
        }
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
