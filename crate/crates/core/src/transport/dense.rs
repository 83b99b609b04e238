//! Complete bipartite network between two supports, costs on the fly.

use std::ops::Range;

use super::simplex::{self, ArcMask, Candidate, Network};
use super::{CostSpec, DiscreteDistribution, Flow, TransportPlan};
use crate::error::Result;
use crate::kde::Vec2;

pub(crate) struct Bipartite<'a> {
    sources: &'a [Vec2],
    targets: &'a [Vec2],
    cost: CostSpec,
    max_cost: f64,
}

impl<'a> Bipartite<'a> {
    pub(crate) fn new(sources: &'a [Vec2], targets: &'a [Vec2], cost: CostSpec) -> Self {
        let (mut lo, mut hi) = (
            Vec2::new(f64::INFINITY, f64::INFINITY),
            Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for p in sources.iter().chain(targets) {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        Bipartite {
            sources,
            targets,
            cost,
            max_cost: cost.eval(lo, hi),
        }
    }
}

impl Network for Bipartite<'_> {
    fn node_count(&self) -> usize {
        self.sources.len() + self.targets.len()
    }

    fn arc_count(&self) -> usize {
        self.sources.len() * self.targets.len()
    }

    #[inline]
    fn endpoints(&self, arc: usize) -> (usize, usize) {
        let n = self.targets.len();
        (arc / n, self.sources.len() + arc % n)
    }

    #[inline]
    fn cost(&self, arc: usize) -> f64 {
        let n = self.targets.len();
        self.cost.eval(self.sources[arc / n], self.targets[arc % n])
    }

    fn max_cost(&self) -> f64 {
        self.max_cost
    }

    fn price(&self, arcs: Range<usize>, pi: &[f64], tree: &ArcMask, best: &mut Candidate) {
        let n = self.targets.len();
        let offset = self.sources.len();
        let mut e = arcs.start;
        while e < arcs.end {
            let i = e / n;
            let j0 = e % n;
            let j1 = (j0 + arcs.end - e).min(n);
            let a = self.sources[i];
            let pa = pi[i];
            for j in j0..j1 {
                let rc = self.cost.eval(a, self.targets[j]) + pa - pi[offset + j];
                if rc < best.reduced_cost && !tree.contains(i * n + j) {
                    *best = Candidate {
                        reduced_cost: rc,
                        arc: i * n + j,
                    };
                }
            }
            e += j1 - j0;
        }
    }
}

/// Optimal plan by network simplex on the complete bipartite graph.
pub(crate) fn solve(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: CostSpec) -> Result<TransportPlan> {
    let net = Bipartite::new(mu.support(), nu.support(), cost);
    let mut supply = Vec::with_capacity(net.node_count());
    supply.extend_from_slice(mu.mass());
    supply.extend(nu.mass().iter().map(|m| -m));
    let sol = simplex::solve(&net, &supply)?;
    let n = nu.len();
    let flows = sol
        .arc_flows
        .into_iter()
        .map(|(e, mass)| Flow {
            source: e / n,
            target: e % n,
            mass,
        })
        .collect();
    log::debug!("dense network simplex: {} pivots", sol.pivots);
    Ok(TransportPlan { flows })
}
