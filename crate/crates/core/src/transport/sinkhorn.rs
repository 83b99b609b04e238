//! Entropy-regularized transport.
//!
//! Iterations run on scaling vectors with an explicit kernel `exp(-C / eps)`
//! when that kernel stays well inside floating-point range: a separable
//! kernel when both supports share a lattice and the cost splits per axis,
//! otherwise a cached dense matrix. Everything else, and any scaling run
//! that overflows, falls back to log-domain updates with costs on the fly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{common_lattice, CostSpec, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::kde::Vec2;
use crate::numeric::pairwise_sum_slice;

/// How often (in iterations) the marginal error is measured.
const CHECK_EVERY: usize = 10;

/// Largest `C / eps` for which the explicit kernel is used.
const MAX_KERNEL_EXPONENT: f64 = 300.0;

/// Largest dense kernel (entries) kept in memory.
const DENSE_KERNEL_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornParams {
    /// Regularization strength, in the units of the ground cost.
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// L1 tolerance on the source marginal.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iters() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-9
}

impl SinkhornParams {
    pub fn new(epsilon: f64) -> Self {
        SinkhornParams {
            epsilon,
            max_iters: default_max_iters(),
            tol: default_tol(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    /// `(sum plan * cost)^(1/p)` for the regularized plan.
    pub distance: f64,
    pub converged: bool,
    pub iterations: usize,
    /// L1 gap between the plan's source marginal and `mu` at exit.
    pub marginal_error: f64,
}

/// Approximate p-Wasserstein distance by Sinkhorn iterations.
///
/// Hitting `max_iters` is not an error; the result carries
/// `converged = false` so callers can flag it.
pub fn wasserstein_sinkhorn(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: CostSpec,
    params: &SinkhornParams,
) -> Result<SinkhornResult> {
    params.validate()?;
    let (xs, a) = positive_part(mu);
    let (ys, b) = positive_part(nu);
    let eps = params.epsilon;

    let scaled = if let Some(k) = LatticeKernel::build(mu, nu, &xs, &ys, cost, eps) {
        scaling(&k, &a, &b, params)
    } else if let Some(k) = DenseKernel::build(&xs, &ys, cost, eps) {
        scaling(&k, &a, &b, params)
    } else {
        None
    };
    let (total, converged, iterations, marginal_error) = match scaled {
        Some(r) => r,
        None => log_domain(&xs, &ys, &a, &b, cost, params),
    };
    Ok(SinkhornResult {
        distance: cost.root(total),
        converged,
        iterations,
        marginal_error,
    })
}

fn positive_part(d: &DiscreteDistribution) -> (Vec<Vec2>, Vec<f64>) {
    d.support()
        .iter()
        .zip(d.mass())
        .filter(|(_, m)| **m > 0.0)
        .map(|(p, m)| (*p, *m))
        .unzip()
}

/// `(plan cost, converged, iterations, marginal error)`.
type Outcome = (f64, bool, usize, f64);

/// The Gibbs kernel `K[i][j] = exp(-C(x_i, y_j) / eps)` as an operator.
trait Kernel: Sync {
    /// `out[i] = sum_j K[i][j] v[j]`.
    fn apply(&self, v: &[f64], out: &mut [f64]);
    /// `out[j] = sum_i K[i][j] u[i]`.
    fn apply_t(&self, u: &[f64], out: &mut [f64]);
    /// `sum_ij u[i] K[i][j] C[i][j] v[j]`.
    fn plan_cost(&self, u: &[f64], v: &[f64]) -> f64;
}

/// Sinkhorn on scaling vectors. `None` if the scalings leave the finite range.
fn scaling(k: &impl Kernel, a: &[f64], b: &[f64], params: &SinkhornParams) -> Option<Outcome> {
    let (n, m) = (a.len(), b.len());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kv = vec![0.0; n];
    let mut ktu = vec![0.0; m];
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut converged = false;
    let finite = |w: &[f64]| w.iter().all(|x| x.is_finite() && *x > 0.0);

    while iterations < params.max_iters {
        k.apply(&v, &mut kv);
        u.iter_mut().zip(a).zip(&kv).for_each(|((ui, ai), s)| *ui = ai / s);
        k.apply_t(&u, &mut ktu);
        v.iter_mut().zip(b).zip(&ktu).for_each(|((vj, bj), s)| *vj = bj / s);
        iterations += 1;
        if !finite(&u) || !finite(&v) {
            log::debug!("sinkhorn scalings left the finite range; using log-domain updates");
            return None;
        }
        if iterations % CHECK_EVERY == 0 || iterations == params.max_iters {
            k.apply(&v, &mut kv);
            let gaps: Vec<f64> = (0..n).map(|i| (u[i] * kv[i] - a[i]).abs()).collect();
            marginal_error = pairwise_sum_slice(&gaps);
            if marginal_error < params.tol {
                converged = true;
                break;
            }
        }
    }
    Some((k.plan_cost(&u, &v), converged, iterations, marginal_error))
}

struct DenseKernel<'a> {
    xs: &'a [Vec2],
    ys: &'a [Vec2],
    cost: CostSpec,
    /// Row-major `n x m`.
    k: Vec<f64>,
}

impl<'a> DenseKernel<'a> {
    fn build(xs: &'a [Vec2], ys: &'a [Vec2], cost: CostSpec, eps: f64) -> Option<Self> {
        let m = ys.len();
        if xs.len().checked_mul(m)? > DENSE_KERNEL_LIMIT {
            return None;
        }
        let rows: Vec<Option<Vec<f64>>> = xs
            .par_iter()
            .map(|x| {
                ys.iter()
                    .map(|y| {
                        let e = cost.eval(*x, *y) / eps;
                        (e <= MAX_KERNEL_EXPONENT).then(|| (-e).exp())
                    })
                    .collect()
            })
            .collect();
        let mut k = Vec::with_capacity(xs.len() * m);
        for row in rows {
            k.extend(row?);
        }
        Some(DenseKernel { xs, ys, cost, k })
    }
}

/// Columns per task in [`DenseKernel::apply_t`].
const COLUMN_CHUNK: usize = 256;

impl Kernel for DenseKernel<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let m = v.len();
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = self.k[i * m..(i + 1) * m].iter().zip(v).map(|(k, v)| k * v).sum());
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        let m = out.len();
        out.par_chunks_mut(COLUMN_CHUNK).enumerate().for_each(|(c, chunk)| {
            let j0 = c * COLUMN_CHUNK;
            chunk.fill(0.0);
            for (i, ui) in u.iter().enumerate() {
                let row = &self.k[i * m + j0..i * m + j0 + chunk.len()];
                chunk.iter_mut().zip(row).for_each(|(o, k)| *o += k * ui);
            }
        });
    }

    fn plan_cost(&self, u: &[f64], v: &[f64]) -> f64 {
        let m = v.len();
        let rows: Vec<f64> = (0..u.len())
            .into_par_iter()
            .map(|i| {
                let x = self.xs[i];
                let krow = &self.k[i * m..(i + 1) * m];
                u[i] * self
                    .ys
                    .iter()
                    .zip(krow)
                    .zip(v)
                    .map(|((y, k), vj)| k * self.cost.eval(x, *y) * vj)
                    .sum::<f64>()
            })
            .collect();
        pairwise_sum_slice(&rows)
    }
}

/// Kernel of an axis-separable cost (`p = 1` with L1, or `p = 2` with L2)
/// on supports sharing a lattice: `K = Kx (x) Ky`, applied one axis at a time
/// over the bounding box of both supports.
struct LatticeKernel {
    width: usize,
    height: usize,
    /// Box cell of each source / target point.
    src: Vec<usize>,
    dst: Vec<usize>,
    /// 1-D kernels and kernel-times-cost by absolute offset.
    kx: Vec<f64>,
    ky: Vec<f64>,
    kcx: Vec<f64>,
    kcy: Vec<f64>,
}

impl LatticeKernel {
    fn build(
        mu: &DiscreteDistribution,
        nu: &DiscreteDistribution,
        xs: &[Vec2],
        ys: &[Vec2],
        cost: CostSpec,
        eps: f64,
    ) -> Option<Self> {
        let axis_cost: fn(f64) -> f64 = match (cost.p, cost.norm_order) {
            (1.0, 1.0) => |t| t,
            (2.0, 2.0) => |t| t * t,
            _ => return None,
        };
        let lat = common_lattice(mu, nu)?;
        let ci: Vec<(i64, i64)> = xs.iter().map(|p| lat.index_of(*p)).collect::<Option<_>>()?;
        let cj: Vec<(i64, i64)> = ys.iter().map(|p| lat.index_of(*p)).collect::<Option<_>>()?;
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for &(x, y) in ci.iter().chain(&cj) {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let width = (x1 - x0 + 1) as usize;
        let height = (y1 - y0 + 1) as usize;
        let reach = axis_cost((width - 1) as f64 * lat.spacing) + axis_cost((height - 1) as f64 * lat.spacing);
        if reach / eps > MAX_KERNEL_EXPONENT {
            return None;
        }
        let cell = |(x, y): (i64, i64)| (y - y0) as usize * width + (x - x0) as usize;
        let profile = |len: usize| -> (Vec<f64>, Vec<f64>) {
            (0..len)
                .map(|d| {
                    let c = axis_cost(d as f64 * lat.spacing);
                    let k = (-c / eps).exp();
                    (k, k * c)
                })
                .unzip()
        };
        let (kx, kcx) = profile(width);
        let (ky, kcy) = profile(height);
        Some(LatticeKernel {
            width,
            height,
            src: ci.into_iter().map(cell).collect(),
            dst: cj.into_iter().map(cell).collect(),
            kx,
            ky,
            kcx,
            kcy,
        })
    }

    /// `out[t] = sum_s fx(|dx|) fy(|dy|) w[s]` from the `from` cells to the `to` cells.
    fn convolve(&self, w: &[f64], from: &[usize], to: &[usize], fx: &[f64], fy: &[f64], out: &mut [f64]) {
        let (wd, ht) = (self.width, self.height);
        let mut field = vec![0.0; wd * ht];
        for (&c, &x) in from.iter().zip(w) {
            field[c] += x;
        }
        // Along x, row by row.
        let mut along_x = vec![0.0; wd * ht];
        along_x
            .par_chunks_mut(wd)
            .zip(field.par_chunks(wd))
            .for_each(|(dst, src)| {
                if src.iter().all(|x| *x == 0.0) {
                    return;
                }
                for (c, d) in dst.iter_mut().enumerate() {
                    *d = src.iter().enumerate().map(|(c2, s)| fx[c.abs_diff(c2)] * s).sum();
                }
            });
        // Along y, only where an output is needed.
        out.par_iter_mut().zip(to).for_each(|(o, &cell)| {
            let (r, c) = (cell / wd, cell % wd);
            *o = (0..ht).map(|r2| fy[r.abs_diff(r2)] * along_x[r2 * wd + c]).sum();
        });
    }
}

impl Kernel for LatticeKernel {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.convolve(v, &self.dst, &self.src, &self.kx, &self.ky, out);
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        self.convolve(u, &self.src, &self.dst, &self.kx, &self.ky, out);
    }

    fn plan_cost(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = u.len();
        let (mut cx, mut cy) = (vec![0.0; n], vec![0.0; n]);
        self.convolve(v, &self.dst, &self.src, &self.kcx, &self.ky, &mut cx);
        self.convolve(v, &self.dst, &self.src, &self.kx, &self.kcy, &mut cy);
        let terms: Vec<f64> = (0..n).map(|i| u[i] * (cx[i] + cy[i])).collect();
        pairwise_sum_slice(&terms)
    }
}

/// Log-domain iterations on dual potentials, costs computed on the fly.
fn log_domain(xs: &[Vec2], ys: &[Vec2], a: &[f64], b: &[f64], cost: CostSpec, params: &SinkhornParams) -> Outcome {
    let eps = params.epsilon;
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; xs.len()];
    let mut g = vec![0.0; ys.len()];
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut converged = false;

    while iterations < params.max_iters {
        update(&mut f, xs, ys, &g, &log_a, eps, cost);
        update(&mut g, ys, xs, &f, &log_b, eps, cost);
        iterations += 1;
        if iterations % CHECK_EVERY == 0 || iterations == params.max_iters {
            marginal_error = source_marginal_error(&f, &g, xs, ys, a, eps, cost);
            if marginal_error < params.tol {
                converged = true;
                break;
            }
        }
    }

    let rows: Vec<f64> = xs
        .par_iter()
        .zip(&f)
        .map(|(x, fi)| {
            ys.iter()
                .zip(&g)
                .map(|(y, gj)| {
                    let c = cost.eval(*x, *y);
                    ((fi + gj - c) / eps).exp() * c
                })
                .sum::<f64>()
        })
        .collect();
    (pairwise_sum_slice(&rows), converged, iterations, marginal_error)
}
/// `out[i] = eps * (log_w[i] - logsumexp_j((other[j] - C(x_i, y_j)) / eps))`.
fn update(out: &mut [f64], xs: &[Vec2], ys: &[Vec2], other: &[f64], log_w: &[f64], eps: f64, cost: CostSpec) {
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let x = xs[i];
        let mut max = f64::NEG_INFINITY;
        for (y, h) in ys.iter().zip(other) {
            max = max.max((h - cost.eval(x, *y)) / eps);
        }
        let s: f64 = ys
            .iter()
            .zip(other)
            .map(|(y, h)| ((h - cost.eval(x, *y)) / eps - max).exp())
            .sum();
        *o = eps * (log_w[i] - max - s.ln());
    });
}

fn source_marginal_error(f: &[f64], g: &[f64], xs: &[Vec2], ys: &[Vec2], a: &[f64], eps: f64, cost: CostSpec) -> f64 {
    xs.par_iter()
        .zip(f)
        .zip(a)
        .map(|((x, fi), ai)| {
            let row: f64 = ys
                .iter()
                .zip(g)
                .map(|(y, gj)| ((fi + gj - cost.eval(*x, *y)) / eps).exp())
                .sum();
            (row - ai).abs()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}
