//! Small numeric helpers shared across modules.

use serde::{Deserialize, Serialize};

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (tree) summation of `term(0) + ... + term(n - 1)`.
///
/// The reduction tree depends only on `n`, so two callers producing the same
/// terms in the same order get bit-identical sums.
pub fn pairwise_sum<F: Fn(usize) -> f64>(n: usize, term: F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
        let len = hi - lo;
        if len <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += term(i);
            }
            acc
        } else {
            let mid = lo + len / 2;
            go(lo, mid, term) + go(mid, hi, term)
        }
    }
    go(0, n, &term)
}

pub fn pairwise_sum_slice(values: &[f64]) -> f64 {
    pairwise_sum(values.len(), |i| values[i])
}

/// Mean and sample standard deviation (n - 1 divisor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    /// `None` when fewer than two values are available.
    pub sd: Option<f64>,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = pairwise_sum_slice(values) / n;
        let sd = (values.len() > 1).then(|| {
            let ss = pairwise_sum(values.len(), |i| (values[i] - mean).powi(2));
            (ss / (n - 1.0)).sqrt()
        });
        Some(Stats {
            count: values.len(),
            mean,
            sd,
        })
    }
}

/// Linearly interpolated quantile of sorted data (the "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Five-number style summary of subset sizes: median, quartiles and range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub subsets: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: usize,
    pub max: usize,
}

impl CountSummary {
    pub fn from_counts(counts: &[usize]) -> Option<CountSummary> {
        if counts.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        sorted.sort_by(f64::total_cmp);
        Some(CountSummary {
            subsets: counts.len(),
            median: quantile_sorted(&sorted, 0.5),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
            min: *counts.iter().min().unwrap(),
            max: *counts.iter().max().unwrap(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_exact_values() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum_slice(&v), 499_500.0);
        assert_eq!(pairwise_sum(0, |_| 1.0), 0.0);
    }

    #[test]
    fn stats_use_sample_sd() {
        let s = Stats::from_values(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert!((s.sd.unwrap() - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        let one = Stats::from_values(&[3.0]).unwrap();
        assert_eq!(one.sd, None);
        let same = Stats::from_values(&[1.5; 11]).unwrap();
        assert_eq!(same.sd, Some(0.0));
    }

    #[test]
    fn quantiles_interpolate() {
        let c = CountSummary::from_counts(&[1, 2, 3, 4]).unwrap();
        assert_eq!(c.median, 2.5);
        assert_eq!(c.q1, 1.75);
        assert_eq!(c.q3, 3.25);
        assert_eq!((c.min, c.max), (1, 4));
    }
}
