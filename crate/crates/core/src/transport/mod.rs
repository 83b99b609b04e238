//! Optimal transport between discretized densities.
//!
//! [`wasserstein_exact`] solves the transport LP by network simplex. For
//! p = 1 with the L1 ground norm on distributions that share a lattice it
//! solves the equivalent flow problem on the lattice graph; otherwise it
//! works on the complete bipartite graph. [`wasserstein_sinkhorn`] is the
//! entropic approximation.

mod dense;
mod lattice;
mod simplex;
mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{DensityGrid, Vec2};
use crate::numeric::pairwise_sum;

pub use sinkhorn::{wasserstein_sinkhorn, SinkhornParams, SinkhornResult};

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A square lattice `origin + spacing * (i, j)` for integer `i, j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: Vec2,
    pub spacing: f64,
}

impl Lattice {
    /// Integer coordinates of `p`, if it sits on the lattice.
    pub fn index_of(&self, p: Vec2) -> Option<(i64, i64)> {
        let fx = (p.x - self.origin.x) / self.spacing;
        let fy = (p.y - self.origin.y) / self.spacing;
        let (rx, ry) = (fx.round(), fy.round());
        let tol = 1e-6;
        if (fx - rx).abs() <= tol && (fy - ry).abs() <= tol && rx.abs() < 1e9 && ry.abs() < 1e9 {
            Some((rx as i64, ry as i64))
        } else {
            None
        }
    }
}

/// Finite probability measure on the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    support: Vec<Vec2>,
    mass: Vec<f64>,
    lattice: Option<Lattice>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<Vec2>, mass: Vec<f64>) -> Result<Self> {
        if support.len() != mass.len() {
            return Err(Error::invalid(format!(
                "support has {} points but mass has {} entries",
                support.len(),
                mass.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::DegenerateInput("distribution has empty support".into()));
        }
        if let Some(p) = support.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("non-finite support point ({}, {})", p.x, p.y)));
        }
        if let Some(m) = mass.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::invalid(format!("mass must be finite and >= 0, got {m}")));
        }
        let total = pairwise_sum(mass.len(), |i| mass[i]);
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!("masses sum to {total}, expected 1")));
        }
        Ok(DiscreteDistribution {
            support,
            mass,
            lattice: None,
        })
    }

    /// Normalizes nonnegative weights to unit mass.
    pub fn from_weights(support: Vec<Vec2>, weights: &[f64]) -> Result<Self> {
        let total = pairwise_sum(weights.len(), |i| weights[i]);
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::DegenerateInput(format!("weights sum to {total}")));
        }
        Self::new(support, weights.iter().map(|w| w / total).collect())
    }

    /// Declares that every support point lies on `lattice`.
    pub fn with_lattice(mut self, lattice: Lattice) -> Result<Self> {
        if !(lattice.spacing.is_finite() && lattice.spacing > 0.0 && lattice.origin.is_finite()) {
            return Err(Error::invalid("lattice needs a finite origin and positive spacing"));
        }
        if let Some(p) = self.support.iter().find(|p| lattice.index_of(**p).is_none()) {
            return Err(Error::invalid(format!(
                "support point ({}, {}) is off the lattice",
                p.x, p.y
            )));
        }
        self.lattice = Some(lattice);
        Ok(self)
    }

    pub fn support(&self) -> &[Vec2] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// The same masses with every support point (and the lattice) moved by `t`.
    pub fn translated(&self, t: Vec2) -> Self {
        DiscreteDistribution {
            support: self.support.iter().map(|p| *p + t).collect(),
            mass: self.mass.clone(),
            lattice: self.lattice.map(|l| Lattice {
                origin: l.origin + t,
                spacing: l.spacing,
            }),
        }
    }
}

/// Ground cost `||a - b||_norm_order ^ p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSpec {
    pub p: f64,
    pub norm_order: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            p: 1.0,
            norm_order: 1.0,
        }
    }
}

impl CostSpec {
    pub fn new(p: f64, norm_order: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::invalid(format!("Wasserstein order p must be >= 1, got {p}")));
        }
        if norm_order.is_nan() || norm_order < 1.0 {
            return Err(Error::invalid(format!(
                "ground norm order must be >= 1, got {norm_order}"
            )));
        }
        Ok(CostSpec { p, norm_order })
    }

    /// Parses a ground-norm name: `l1`, `l2` or `linf`.
    pub fn norm_from_name(name: &str) -> Result<f64> {
        match name.to_ascii_lowercase().as_str() {
            "l1" | "manhattan" => Ok(1.0),
            "l2" | "euclidean" => Ok(2.0),
            "linf" => Ok(f64::INFINITY),
            other => Err(Error::invalid(format!("unknown ground norm '{other}'"))),
        }
    }

    #[inline]
    pub(crate) fn eval(self, a: Vec2, b: Vec2) -> f64 {
        let dx = (a.x - b.x).abs();
        let dy = (a.y - b.y).abs();
        let n = if self.norm_order == 1.0 {
            dx + dy
        } else if self.norm_order == 2.0 {
            (dx * dx + dy * dy).sqrt()
        } else if self.norm_order == f64::INFINITY {
            dx.max(dy)
        } else {
            (dx.powf(self.norm_order) + dy.powf(self.norm_order)).powf(1.0 / self.norm_order)
        };
        if self.p == 1.0 {
            n
        } else if self.p == 2.0 {
            n * n
        } else {
            n.powf(self.p)
        }
    }

    /// Converts a plan cost into a distance, `total^(1/p)`.
    pub(crate) fn root(self, total: f64) -> f64 {
        if self.p == 1.0 {
            total
        } else {
            total.max(0.0).powf(1.0 / self.p)
        }
    }
}

impl<'de> Deserialize<'de> for CostSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(default = "one")]
            p: f64,
            #[serde(default = "one")]
            norm_order: f64,
        }
        fn one() -> f64 {
            1.0
        }
        let raw = Raw::deserialize(d)?;
        CostSpec::new(raw.p, raw.norm_order).map_err(serde::de::Error::custom)
    }
}

/// `(||a - b||_norm_order)^p`.
pub fn ground_cost(a: Vec2, b: Vec2, cost: CostSpec) -> f64 {
    cost.eval(a, b)
}

/// One entry of a sparse coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Sparse coupling between two discrete distributions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransportPlan {
    pub flows: Vec<Flow>,
}

impl TransportPlan {
    /// Row sums, one per source point.
    pub fn source_marginal(&self, sources: usize) -> Vec<f64> {
        let mut out = vec![0.0; sources];
        for f in &self.flows {
            out[f.source] += f.mass;
        }
        out
    }

    /// Column sums, one per target point.
    pub fn target_marginal(&self, targets: usize) -> Vec<f64> {
        let mut out = vec![0.0; targets];
        for f in &self.flows {
            out[f.target] += f.mass;
        }
        out
    }

    /// `sum mass * ground_cost` over the flows.
    pub fn cost(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: CostSpec) -> f64 {
        pairwise_sum(self.flows.len(), |k| {
            let f = &self.flows[k];
            f.mass * cost.eval(mu.support[f.source], nu.support[f.target])
        })
    }

    /// Sorted by (source, target) with duplicate pairs combined.
    fn merged(mut self) -> Self {
        self.flows.sort_by_key(|f| (f.source, f.target));
        let mut out: Vec<Flow> = Vec::with_capacity(self.flows.len());
        for f in self.flows {
            match out.last_mut() {
                Some(last) if last.source == f.source && last.target == f.target => last.mass += f.mass,
                _ => out.push(f),
            }
        }
        TransportPlan { flows: out }
    }
}

/// Which network the exact solver ran on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExactMethod {
    /// 4-neighbour lattice graph (p = 1, L1 ground norm, shared lattice).
    Lattice,
    /// Complete bipartite graph between the two supports.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactTransport {
    pub distance: f64,
    pub plan: TransportPlan,
    pub method: ExactMethod,
}

/// Exact p-Wasserstein distance and an optimal plan.
pub fn wasserstein_exact(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: CostSpec,
) -> Result<ExactTransport> {
    let method = if shared_lattice(mu, nu, cost).is_some() {
        ExactMethod::Lattice
    } else {
        ExactMethod::Dense
    };
    wasserstein_exact_with(mu, nu, cost, method)
}

/// [`wasserstein_exact`] on a chosen network. Asking for
/// [`ExactMethod::Lattice`] when it does not apply is an error.
pub fn wasserstein_exact_with(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: CostSpec,
    method: ExactMethod,
) -> Result<ExactTransport> {
    let plan = match method {
        ExactMethod::Dense => dense::solve(mu, nu, cost)?,
        ExactMethod::Lattice => {
            let lat = shared_lattice(mu, nu, cost).ok_or_else(|| {
                Error::invalid("lattice solver needs p = 1, the L1 ground norm and supports on one lattice")
            })?;
            lattice::solve(mu, nu, &lat)?
        }
    };
    Ok(ExactTransport {
        distance: cost.root(plan.cost(mu, nu, cost)),
        plan,
        method,
    })
}

fn shared_lattice(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: CostSpec) -> Option<Lattice> {
    if cost.p != 1.0 || cost.norm_order != 1.0 {
        return None;
    }
    common_lattice(mu, nu)
}

/// A lattice both supports sit on, if their lattices line up.
pub(crate) fn common_lattice(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Option<Lattice> {
    let (a, b) = (mu.lattice?, nu.lattice?);
    if (a.spacing - b.spacing).abs() > 1e-12 * a.spacing {
        return None;
    }
    b.index_of(a.origin)?;
    Some(a)
}

/// Median of the ground cost over all support pairs.
pub fn median_ground_cost(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: CostSpec) -> f64 {
    let mut costs: Vec<f64> = mu
        .support
        .iter()
        .flat_map(|a| nu.support.iter().map(move |b| cost.eval(*a, *b)))
        .collect();
    let n = costs.len();
    let mid = n / 2;
    let (_, upper, _) = costs.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = costs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Cell masses of `grid` as a distribution on its cell centers.
///
/// Cells with zero value, and cells whose normalized mass is below
/// `mass_floor`, are dropped; the rest are renormalized.
pub fn discretize(grid: &DensityGrid, mass_floor: f64) -> Result<DiscreteDistribution> {
    if !(mass_floor.is_finite() && mass_floor >= 0.0) {
        return Err(Error::invalid(format!("mass_floor must be >= 0, got {mass_floor}")));
    }
    let spec = grid.spec();
    let values = grid.values();
    let area = spec.cell_area();
    let total = pairwise_sum(values.len(), |i| values[i] * area);
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateInput("grid has no positive mass".into()));
    }
    let cols = spec.cols();
    let mut support = Vec::new();
    let mut kept = Vec::new();
    let mut largest: f64 = 0.0;
    for (i, v) in values.iter().enumerate() {
        let m = v * area / total;
        largest = largest.max(m);
        if m > 0.0 && m >= mass_floor {
            support.push(spec.center(i / cols, i % cols));
            kept.push(m);
        }
    }
    if kept.is_empty() {
        return Err(Error::FloorTooAggressive {
            floor: mass_floor,
            largest,
        });
    }
    let lattice = Lattice {
        origin: spec.center(0, 0),
        spacing: spec.cell_size,
    };
    DiscreteDistribution::from_weights(support, &kept)?.with_lattice(lattice)
}
