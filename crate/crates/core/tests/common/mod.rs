//! Shared test support: an independent LP oracle, fixtures and generators.
#![allow(dead_code, clippy::approx_constant)]

use std::collections::BTreeMap;

use fieldkde::transport::{discretize, ground_cost, CostSpec, DiscreteDistribution};
use fieldkde::{DensityGrid, GridSpec, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PIVOT_EPS: f64 = 1e-12;

/// `min c.x  s.t.  A x = b, x >= 0` with `b >= 0`, by a dense two-phase
/// tableau simplex using Bland's rule. Returns the optimal objective.
pub fn lp_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let m = a.len();
    let n = c.len();
    let rhs = n + m;
    let mut t = vec![vec![0.0; n + m + 1]; m];
    for i in 0..m {
        assert!(b[i] >= 0.0);
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][rhs] = b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let phase1: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    run_simplex(&mut t, &mut basis, &phase1, n + m);
    let infeasibility: f64 = (0..m).filter(|&i| basis[i] >= n).map(|i| t[i][rhs]).sum();
    assert!(infeasibility < 1e-9, "LP infeasible ({infeasibility})");

    // Pivot leftover artificials out; rows where that is impossible are redundant.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    run_simplex(&mut t, &mut basis, &phase2, n);
    (0..m).filter(|&i| basis[i] < n).map(|i| c[basis[i]] * t[i][rhs]).sum()
}

fn run_simplex(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) {
    let m = t.len();
    let rhs = t[0].len() - 1;
    loop {
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = (0..m).map(|i| cost[basis[i]] * t[i][j]).sum();
            cost[j] - z < -1e-11
        });
        let Some(j) = entering else { return };
        let mut leave: Option<usize> = None;
        for i in 0..m {
            if t[i][j] > PIVOT_EPS {
                let ratio = t[i][rhs] / t[i][j];
                leave = match leave {
                    None => Some(i),
                    Some(l) => {
                        let best = t[l][rhs] / t[l][j];
                        if ratio < best - 1e-15 || ((ratio - best).abs() <= 1e-15 && basis[i] < basis[l]) {
                            Some(i)
                        } else {
                            Some(l)
                        }
                    }
                };
            }
        }
        let i = leave.expect("LP unbounded");
        pivot(t, basis, i, j);
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (i, r) in t.iter_mut().enumerate() {
        if i != row && r[col] != 0.0 {
            let f = r[col];
            for (v, pv) in r.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }
    basis[row] = col;
}

/// Optimal transport cost (before taking the 1/p root) via [`lp_min`].
pub fn transport_lp(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: CostSpec) -> f64 {
    let (m, n) = (mu.len(), nu.len());
    let mut a = Vec::with_capacity(m + n);
    let mut b = Vec::with_capacity(m + n);
    for i in 0..m {
        let mut row = vec![0.0; m * n];
        row[i * n..(i + 1) * n].fill(1.0);
        a.push(row);
        b.push(mu.mass()[i]);
    }
    for j in 0..n {
        let mut row = vec![0.0; m * n];
        for i in 0..m {
            row[i * n + j] = 1.0;
        }
        a.push(row);
        b.push(nu.mass()[j]);
    }
    let c: Vec<f64> = (0..m * n)
        .map(|k| ground_cost(mu.support()[k / n], nu.support()[k % n], cost))
        .collect();
    lp_min(&a, &b, &c)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random distribution with `n` distinct points in [0, 20)^2.
pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> DiscreteDistribution {
    let support: Vec<Vec2> = (0..n)
        .map(|_| Vec2::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)))
        .collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    DiscreteDistribution::from_weights(support, &weights).unwrap()
}

/// A sum of `blobs` random Gaussian bumps on `spec`.
pub fn blob_grid(rng: &mut ChaCha8Rng, spec: &GridSpec, blobs: usize) -> DensityGrid {
    let centers: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(spec.x_min..spec.x_max),
                rng.random_range(spec.y_min..spec.y_max),
                rng.random_range(0.1..0.3) * (spec.x_max - spec.x_min),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    let mut values = Vec::with_capacity(spec.len());
    for r in 0..spec.rows() {
        for c in 0..spec.cols() {
            let p = spec.center(r, c);
            let v: f64 = centers
                .iter()
                .map(|&(x, y, s, w)| w * (-((p.x - x).powi(2) + (p.y - y).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            values.push(v);
        }
    }
    DensityGrid::new(*spec, values).unwrap()
}

pub fn blob_distribution(rng: &mut ChaCha8Rng, spec: &GridSpec, blobs: usize) -> DiscreteDistribution {
    discretize(&blob_grid(rng, spec, blobs), 1e-10).unwrap()
}

/// Published league distance table: (team, 'All', row entries with NaN on
/// the diagonal, printed row mean, printed row SD).
pub const LEAGUE_TABLE_TEAMS: [&str; 12] = [
    "Cas", "Cat", "Hud", "Hul", "HKR", "Lee", "Lei", "Sal", "StH", "Wak", "War", "Wig",
];

pub const LEAGUE_TABLE_ROWS: [(f64, [f64; 12], f64, f64); 12] = {
    const X: f64 = f64::NAN;
    [
        (
            3.07,
            [X, 4.02, 6.64, 4.74, 5.19, 5.36, 4.29, 3.38, 5.48, 2.48, 2.88, 3.17],
            4.33,
            1.28,
        ),
        (
            1.08,
            [6.21, X, 3.00, 2.76, 3.17, 10.16, 4.59, 8.27, 6.63, 1.87, 4.27, 4.85],
            5.07,
            2.54,
        ),
        (
            3.38,
            [4.45, 1.69, X, 3.85, 2.77, 2.77, 3.99, 2.24, 11.90, 4.43, 2.96, 5.21],
            4.20,
            2.76,
        ),
        (
            1.38,
            [2.75, 9.30, 4.79, X, 4.34, 2.55, 4.19, 4.63, 6.83, 4.12, 7.61, 4.05],
            5.01,
            2.06,
        ),
        (
            2.12,
            [7.04, 5.86, 3.32, 6.77, X, 2.00, 4.76, 4.27, 10.58, 2.82, 6.19, 2.68],
            5.12,
            2.51,
        ),
        (
            2.27,
            [5.32, 7.22, 4.68, 3.35, 3.06, X, 7.49, 3.82, 6.28, 2.63, 5.24, 7.74],
            5.17,
            1.84,
        ),
        (
            2.61,
            [15.00, 6.31, 3.10, 9.56, 2.26, 6.05, X, 3.39, 3.86, 3.72, 4.86, 3.47],
            5.60,
            3.73,
        ),
        (
            2.36,
            [5.51, 2.83, 7.11, 4.31, 3.63, 5.03, 2.09, X, 5.20, 7.03, 5.49, 3.87],
            4.74,
            1.59,
        ),
        (
            1.60,
            [5.47, 6.11, 4.63, 3.71, 7.37, 4.14, 2.73, 2.83, X, 1.86, 2.61, 3.91],
            4.12,
            1.67,
        ),
        (
            1.85,
            [4.43, 4.93, 3.16, 4.81, 3.08, 4.84, 6.25, 5.25, 3.28, X, 7.08, 3.09],
            4.56,
            1.34,
        ),
        (
            1.72,
            [3.72, 9.21, 2.56, 4.46, 5.08, 2.50, 3.48, 3.03, 4.57, 5.45, X, 4.28],
            4.40,
            1.87,
        ),
        (
            1.34,
            [3.60, 10.56, 2.02, 3.27, 3.38, 4.74, 4.49, 5.70, 6.26, 2.20, 3.91, X],
            4.56,
            2.38,
        ),
    ]
};

/// Printed column means and SDs, 'All' first.
pub const LEAGUE_TABLE_COL_MEAN: [f64; 13] = [
    2.07, 5.77, 6.19, 4.09, 4.69, 3.94, 4.56, 4.40, 4.26, 6.44, 3.51, 4.83, 4.21,
];
pub const LEAGUE_TABLE_COL_SD: [f64; 13] = [
    0.71, 3.30, 2.77, 1.64, 1.94, 1.47, 2.30, 1.49, 1.69, 2.64, 1.64, 1.69, 1.39,
];

/// The league table as the maps the pipeline produces.
pub fn league_table() -> (BTreeMap<String, f64>, BTreeMap<String, BTreeMap<String, f64>>) {
    let mut all = BTreeMap::new();
    let mut within = BTreeMap::new();
    for (t, (a, row, _, _)) in LEAGUE_TABLE_TEAMS.iter().zip(LEAGUE_TABLE_ROWS) {
        all.insert(t.to_string(), a);
        let entries: BTreeMap<String, f64> = LEAGUE_TABLE_TEAMS
            .iter()
            .zip(row)
            .filter(|(_, v)| !v.is_nan())
            .map(|(o, v)| (o.to_string(), v))
            .collect();
        within.insert(t.to_string(), entries);
    }
    (all, within)
}
