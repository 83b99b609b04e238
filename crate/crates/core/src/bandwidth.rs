//! Likelihood cross-validation bandwidth selection and geometric-mean pooling.
//!
//! Each subset gets its own bandwidth by k-fold cross-validation over a
//! candidate grid; the per-subset choices are then pooled into one shared
//! bandwidth so every model in an analysis is smoothed identically.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{Bandwidth, SampleSet, Vec2};
use crate::numeric::{pairwise_sum, pairwise_sum_slice};

/// Kernel terms smaller than `exp(-SKIP_EXPONENT)` times the largest term of a
/// held-out point are skipped. Their combined weight is below one ulp for any
/// realistic subset size.
const SKIP_EXPONENT: f64 = 50.0;

/// Strictly increasing positive candidate bandwidths (square meters).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CandidateGrid {
    values: Vec<f64>,
}

impl CandidateGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("candidate grid needs at least two bandwidths"));
        }
        if values.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::invalid("candidate bandwidths must be finite and > 0"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("candidate bandwidths must be strictly increasing"));
        }
        Ok(CandidateGrid { values })
    }

    /// `count` log-spaced values from `min` to `max` inclusive.
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(min > 0.0 && max > min) {
            return Err(Error::invalid(format!(
                "log-spaced grid needs 0 < min < max and count >= 2, got ({min}, {max}, {count})"
            )));
        }
        let (lo, hi) = (min.ln(), max.ln());
        let step = (hi - lo) / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count).map(|i| (lo + step * i as f64).exp()).collect();
        values[0] = min;
        values[count - 1] = max;
        CandidateGrid::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        CandidateGrid::new(self.values.iter().map(|h| h * factor).collect())
    }
}

impl Default for CandidateGrid {
    /// 40 log-spaced values from 0.25 to 100 square meters.
    fn default() -> Self {
        CandidateGrid::log_spaced(0.25, 100.0, 40).expect("default grid is valid")
    }
}

impl<'de> Deserialize<'de> for CandidateGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        CandidateGrid::new(Vec::<f64>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Splits `0..n` into `cfg.folds` folds: a seeded shuffle (unless disabled)
/// cut into contiguous chunks, the first `n % folds` chunks one longer.
pub fn fold_assignment(n: usize, cfg: &CvConfig) -> Result<Vec<Vec<usize>>> {
    if cfg.folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {}", cfg.folds)));
    }
    if n < cfg.folds {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot be split into {} folds",
            cfg.folds
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    }
    let base = n / cfg.folds;
    let extra = n % cfg.folds;
    let mut folds = Vec::with_capacity(cfg.folds);
    let mut start = 0;
    for k in 0..cfg.folds {
        let len = base + usize::from(k < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Mean held-out log density per point for each candidate bandwidth.
///
/// Every held-out point is scored against the model fit on the other folds.
/// The per-point results are summed in point order, so the output does not
/// depend on how the work is scheduled.
pub fn cv_curve(samples: &SampleSet, bandwidths: &[f64], cfg: &CvConfig) -> Result<Vec<f64>> {
    if let Some(h) = bandwidths.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
        return Err(Error::invalid(format!("bandwidth must be finite and > 0, got {h}")));
    }
    let pts = samples.points();
    let n = pts.len();
    let folds = fold_assignment(n, cfg)?;
    let mut fold_of = vec![0usize; n];
    for (k, fold) in folds.iter().enumerate() {
        for &i in fold {
            fold_of[i] = k;
        }
    }

    let per_point: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |dist2, i| {
            dist2.clear();
            dist2.extend(
                (0..n)
                    .filter(|&j| fold_of[j] != fold_of[i])
                    .map(|j| squared_distance(pts[i], pts[j])),
            );
            dist2.sort_by(f64::total_cmp);
            held_out_log_densities(dist2, bandwidths)
        })
        .collect();

    Ok((0..bandwidths.len())
        .map(|k| pairwise_sum(n, |i| per_point[i][k]) / n as f64)
        .collect())
}

#[inline]
fn squared_distance(a: Vec2, b: Vec2) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

/// Log density of one held-out point for each bandwidth, given its sorted
/// squared distances to the training points.
fn held_out_log_densities(sorted_dist2: &[f64], bandwidths: &[f64]) -> Vec<f64> {
    let m = sorted_dist2.len() as f64;
    let nearest = sorted_dist2[0];
    bandwidths
        .iter()
        .map(|&h| {
            let two_h = 2.0 * h;
            let cutoff = nearest + SKIP_EXPONENT * two_h;
            let used = sorted_dist2.partition_point(|&d| d <= cutoff);
            let sum = pairwise_sum(used, |j| ((nearest - sorted_dist2[j]) / two_h).exp());
            -nearest / two_h + sum.ln() - m.ln() - (2.0 * std::f64::consts::PI * h).ln()
        })
        .collect()
}

/// Mean held-out log-likelihood per point (nats) at bandwidth `h`.
pub fn cv_score(samples: &SampleSet, h: Bandwidth, cfg: &CvConfig) -> Result<f64> {
    Ok(cv_curve(samples, &[h.value()], cfg)?[0])
}

/// Outcome of a grid search: the chosen bandwidth and the full score curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub bandwidth: Bandwidth,
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Grid search returning the whole curve. Ties go to the larger bandwidth.
pub fn select_with_curve(samples: &SampleSet, grid: &CandidateGrid, cfg: &CvConfig) -> Result<Selection> {
    let scores = cv_curve(samples, grid.values(), cfg)?;
    let index = argmax_last(&scores);
    Ok(Selection {
        bandwidth: Bandwidth::new(grid.values()[index])?,
        index,
        scores,
    })
}

/// Index of the maximum; among equal maxima the last (largest bandwidth) wins.
fn argmax_last(scores: &[f64]) -> usize {
    let mut index = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s >= scores[index] {
            index = k;
        }
    }
    index
}

/// The candidate with the best cross-validation score.
pub fn select_bandwidth(samples: &SampleSet, grid: &CandidateGrid, cfg: &CvConfig) -> Result<Bandwidth> {
    Ok(select_with_curve(samples, grid, cfg)?.bandwidth)
}

/// `exp(mean(ln h))` of the given bandwidths.
pub fn pool_geometric_mean(hs: &[Bandwidth]) -> Result<Bandwidth> {
    if hs.is_empty() {
        return Err(Error::EmptyInput("no bandwidths to pool".into()));
    }
    let logs: Vec<f64> = hs.iter().map(|h| h.value().ln()).collect();
    Bandwidth::new((pairwise_sum_slice(&logs) / hs.len() as f64).exp())
}
