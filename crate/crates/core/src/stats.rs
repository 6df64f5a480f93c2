//! Small sample statistics and log-log regression.

use crate::math;

/// Two-pass mean and unbiased sample variance, both taken about the first
/// sample so that identical samples give exactly their value and zero
/// variance. Variance is 0 for fewer than two samples.
pub fn mean_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let shift = samples[0];
    let offset = samples.iter().map(|x| x - shift).sum::<f64>() / n as f64;
    let mean = shift + offset;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = samples
        .iter()
        .map(|x| (x - shift - offset) * (x - shift - offset))
        .sum();
    (mean, ss / (n - 1) as f64)
}

pub fn standard_error(variance: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    math::sqrt(variance / n as f64)
}

/// Two-sided 95% Student-t quantile.
pub fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
        2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
        2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        1..=30 => TABLE[df - 1],
        31..=60 => 2.000,
        61..=120 => 1.980,
        _ => 1.960,
    }
}

/// Ordinary least-squares line through `(x, y)` with a 95% interval on the
/// slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    let n = x.len();
    if n < 2 || y.len() != n || !x.iter().chain(y).all(|v| v.is_finite()) {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let (slope_stderr, half) = if n > 2 {
        let se = math::sqrt(sse / (n - 2) as f64 / sxx);
        (se, t_quantile_975(n - 2) * se)
    } else {
        (0.0, 0.0)
    };
    Some(SlopeFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
        ci_low: slope - half,
        ci_high: slope + half,
    })
}

/// Fit of `log y` against `log x`. `None` when any value is not positive.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: alloc::vec::Vec<f64> = x.iter().map(|v| math::ln(*v)).collect();
    let ly: alloc::vec::Vec<f64> = y.iter().map(|v| math::ln(*v)).collect();
    linear_fit(&lx, &ly)
}
