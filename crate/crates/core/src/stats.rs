//! Small statistics kit: quasi-norms, order fits, bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `E[|x|^p]^{1/p}` over the sample. `p = 0` gives the geometric mean.
pub fn lp_norm(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    if p == 0.0 {
        return (xs.iter().map(|x| x.abs().ln()).sum::<f64>() / xs.len() as f64).exp();
    }
    mean(&xs.iter().map(|x| x.abs().powf(p)).collect::<Vec<_>>()).powf(1.0 / p)
}

/// Linear-interpolated quantile of an already sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), actual: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter("an order fit needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("order fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

/// Order fit on the last `tail` points.
pub fn tail_order(xs: &[f64], ys: &[f64], tail: usize) -> Result<f64> {
    let start = xs.len().saturating_sub(tail);
    loglog_slope(&xs[start..], &ys[start..])
}

/// Confidence interval for a statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Percentile bootstrap for `stat` over i.i.d. rows.
pub fn bootstrap<T>(
    rows: &[T],
    stat: impl Fn(&[&T]) -> f64,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Interval {
    let all: Vec<&T> = rows.iter().collect();
    let estimate = stat(&all);
    if rows.is_empty() || resamples == 0 {
        return Interval { estimate, lower: estimate, upper: estimate };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<f64> = (0..resamples)
        .map(|_| {
            let pick: Vec<&T> = (0..rows.len()).map(|_| &rows[rng.random_range(0..rows.len())]).collect();
            stat(&pick)
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Interval { estimate, lower: quantile_sorted(&draws, tail), upper: quantile_sorted(&draws, 1.0 - tail) }
}

/// Moving-block bootstrap interval for the mean of a correlated series.
pub fn block_bootstrap_mean(series: &[f64], block: usize, resamples: usize, level: f64, seed: u64) -> Interval {
    let estimate = mean(series);
    let n = series.len();
    let block = block.clamp(1, n.max(1));
    if n == 0 || resamples == 0 {
        return Interval { estimate, lower: estimate, upper: estimate };
    }
    let mut prefix = vec![0.0; n + 1];
    for (i, x) in series.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    let starts = n - block + 1;
    let blocks = n.div_ceil(block);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut total = 0.0;
            for _ in 0..blocks {
                let s = rng.random_range(0..starts);
                total += prefix[s + block] - prefix[s];
            }
            total / (blocks * block) as f64
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Interval { estimate, lower: quantile_sorted(&draws, tail), upper: quantile_sorted(&draws, 1.0 - tail) }
}
