//! Small numeric helpers shared by the sampler, tests and diagnostics.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// `ln(e^a + e^b)` with `-inf` handled.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pearson correlation; `NaN` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Sample autocorrelation at lags `1..=max_lag` (truncated to the trace length).
pub fn autocorrelation(trace: &[f64], max_lag: usize) -> Vec<f64> {
    let n = trace.len();
    if n < 2 {
        return Vec::new();
    }
    let m = mean(trace);
    let var: f64 = trace.iter().map(|x| (x - m).powi(2)).sum();
    (1..=max_lag.min(n - 1))
        .map(|lag| {
            if var == 0.0 {
                return 0.0;
            }
            let cov: f64 = (0..n - lag)
                .map(|t| (trace[t] - m) * (trace[t + lag] - m))
                .sum();
            cov / var
        })
        .collect()
}

/// Upper-tail chi-square probability.
pub fn chi_square_sf(stat: f64, df: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    let chi = ChiSquared::new(df).expect("df must be positive");
    chi.sf(stat)
}

pub fn chi_square_quantile(p: f64, df: f64) -> f64 {
    ChiSquared::new(df)
        .expect("df must be positive")
        .inverse_cdf(p)
}

/// Least-squares slope of sorted sample quantiles on chi-square(df) quantiles
/// at plotting positions `(i − 0.5)/n`.
pub fn qq_slope_chi_square(sample: &[f64], df: f64) -> f64 {
    let mut y = sample.to_vec();
    y.sort_by(f64::total_cmp);
    let n = y.len();
    let x: Vec<f64> = (0..n)
        .map(|i| chi_square_quantile((i as f64 + 0.5) / n as f64, df))
        .collect();
    regression_slope(&x, &y).0
}

/// Ordinary least squares `y = a + b x`; returns `(slope, standard error)`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (slope, se)
}

/// Two-sided p-value for a zero slope of `values` against their index.
pub fn trend_p_value(values: &[f64]) -> f64 {
    let x: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    let (slope, se) = regression_slope(&x, values);
    if se == 0.0 || !se.is_finite() {
        return if slope == 0.0 { 1.0 } else { 0.0 };
    }
    let t = StudentsT::new(0.0, 1.0, values.len() as f64 - 2.0).expect("df > 0");
    2.0 * t.sf((slope / se).abs())
}

/// Kolmogorov–Smirnov distance between a sample and U(0,1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Pearson chi-square test of independence on a 2×k table (empty columns dropped).
pub fn chi_square_2xk(rows: [&[usize]; 2]) -> (f64, f64) {
    let tot: [f64; 2] = [
        rows[0].iter().sum::<usize>() as f64,
        rows[1].iter().sum::<usize>() as f64,
    ];
    let n = tot[0] + tot[1];
    let mut stat = 0.0;
    let mut cols = 0;
    for (&a, &b) in rows[0].iter().zip(rows[1]) {
        let col = (a + b) as f64;
        if col == 0.0 {
            continue;
        }
        cols += 1;
        for (obs, t) in [(a, tot[0]), (b, tot[1])] {
            let e = t * col / n;
            if e > 0.0 {
                stat += (obs as f64 - e).powi(2) / e;
            }
        }
    }
    if cols < 2 || tot[0] == 0.0 || tot[1] == 0.0 {
        return (0.0, 1.0);
    }
    let df = (cols - 1) as f64;
    (stat, chi_square_sf(stat, df))
}
