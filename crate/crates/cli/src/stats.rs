use serde::Serialize;

/// Summary of one series. Moment-based quantities are `None` for a constant
/// column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub name: String,
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub sd: f64,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    /// `n/6 · (S² + K²/4)` with `K` the excess kurtosis.
    pub jarque_bera: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptiveStats {
    pub columns: Vec<ColumnStats>,
    /// Pearson correlations; off-diagonal entries involving a constant column are NaN.
    pub correlation: Vec<Vec<f64>>,
}

fn column_stats(name: &str, v: &[f64]) -> ColumnStats {
    let n = v.len();
    let nf = n as f64;
    let mean = v.iter().sum::<f64>() / nf;
    let central = |k: i32| v.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / nf;
    let m2 = central(2);
    let sd = if n > 1 { (m2 * nf / (nf - 1.0)).sqrt() } else { 0.0 };
    let (skewness, excess_kurtosis, jarque_bera) = if m2 > 0.0 {
        let s = central(3) / m2.powf(1.5);
        let k = central(4) / (m2 * m2) - 3.0;
        (Some(s), Some(k), Some(nf / 6.0 * (s * s + k * k / 4.0)))
    } else {
        (None, None, None)
    };
    ColumnStats {
        name: name.to_string(),
        n,
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        mean,
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        sd,
        skewness,
        excess_kurtosis,
        jarque_bera,
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

pub fn describe(names: &[String], columns: &[&[f64]]) -> DescriptiveStats {
    let d = columns.len();
    let correlation = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| if i == j { 1.0 } else { correlation(columns[i], columns[j]) })
                .collect()
        })
        .collect();
    DescriptiveStats {
        columns: names.iter().zip(columns).map(|(n, c)| column_stats(n, c)).collect(),
        correlation,
    }
}
