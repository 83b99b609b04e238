//! Primal network simplex for uncapacitated min-cost flow.
//!
//! Spanning-tree bases are kept in thread/successor form with the strongly
//! feasible leaving-arc rule, and entering arcs are found by block search.
//! Arcs come from a [`Network`], which may generate them on the fly, so a
//! complete bipartite transport problem never stores its cost matrix.

use std::ops::Range;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Relative tolerance on reduced costs when deciding an arc can improve.
const PRICE_EPS: f64 = 1e-14;

/// Bitset of real arcs currently in the spanning tree.
pub(crate) struct ArcMask {
    words: Vec<u64>,
}

impl ArcMask {
    fn new(len: usize) -> Self {
        ArcMask {
            words: vec![0; len.div_ceil(64)],
        }
    }

    #[inline]
    pub(crate) fn contains(&self, arc: usize) -> bool {
        self.words[arc >> 6] & (1 << (arc & 63)) != 0
    }

    fn insert(&mut self, arc: usize) {
        self.words[arc >> 6] |= 1 << (arc & 63);
    }

    fn remove(&mut self, arc: usize) {
        self.words[arc >> 6] &= !(1 << (arc & 63));
    }
}

/// Best entering candidate found so far.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub reduced_cost: f64,
    pub arc: usize,
}

/// Directed arcs with nonnegative costs and unbounded capacity.
pub(crate) trait Network {
    fn node_count(&self) -> usize;
    fn arc_count(&self) -> usize;
    fn endpoints(&self, arc: usize) -> (usize, usize);
    fn cost(&self, arc: usize) -> f64;
    /// An upper bound on every arc cost.
    fn max_cost(&self) -> f64;

    /// Lowers `best` to the most negative reduced cost
    /// `cost + pi[source] - pi[target]` among non-tree arcs in `arcs`.
    fn price(&self, arcs: Range<usize>, pi: &[f64], tree: &ArcMask, best: &mut Candidate) {
        for e in arcs {
            let (s, t) = self.endpoints(e);
            let rc = self.cost(e) + pi[s] - pi[t];
            if rc < best.reduced_cost && !tree.contains(e) {
                *best = Candidate {
                    reduced_cost: rc,
                    arc: e,
                };
            }
        }
    }
}

/// Optimal flow on real arcs (only arcs carrying positive flow are listed).
#[derive(Debug, Clone)]
pub(crate) struct FlowSolution {
    pub arc_flows: Vec<(usize, f64)>,
    pub pivots: usize,
}

struct Solver<'a, N: Network> {
    net: &'a N,
    arc_num: usize,
    root: usize,
    art_cost: f64,
    // Artificial arc of node u runs u -> root when true, root -> u otherwise.
    art_to_root: Vec<bool>,

    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_up: Vec<bool>,
    pred_flow: Vec<f64>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    in_tree: ArcMask,

    block_size: usize,
    next_arc: usize,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

/// Solves `min sum cost * flow` subject to node balances `supply`
/// (positive = source). Supplies must sum to zero up to rounding.
pub(crate) fn solve<N: Network>(net: &N, supply: &[f64]) -> Result<FlowSolution> {
    let node_num = net.node_count();
    assert_eq!(supply.len(), node_num);
    if node_num == 0 {
        return Ok(FlowSolution {
            arc_flows: Vec::new(),
            pivots: 0,
        });
    }
    let mut s = Solver::new(net, supply);
    let mut pivots = 0;
    while s.find_entering_arc() {
        s.find_join_node();
        s.find_leaving_arc()?;
        s.change_flow();
        s.update_tree_structure();
        s.update_potential();
        pivots += 1;
    }

    let total_supply: f64 = supply.iter().filter(|v| **v > 0.0).sum();
    let tol = 1e-9 * total_supply.max(1.0);
    let mut arc_flows = Vec::with_capacity(node_num);
    for u in 0..node_num {
        let e = s.pred[u];
        let f = s.pred_flow[u];
        if e < s.arc_num {
            if f > 0.0 {
                arc_flows.push((e, f));
            }
        } else if f > tol {
            return Err(Error::Solver(format!(
                "infeasible balances: {f:e} units left on an artificial arc"
            )));
        }
    }
    arc_flows.sort_by_key(|&(e, _)| e);
    Ok(FlowSolution { arc_flows, pivots })
}

impl<'a, N: Network> Solver<'a, N> {
    fn new(net: &'a N, supply: &[f64]) -> Self {
        let node_num = net.node_count();
        let arc_num = net.arc_count();
        let all = node_num + 1;
        let root = node_num;
        let art_cost = (net.max_cost() + 1.0) * node_num as f64;

        let mut s = Solver {
            net,
            arc_num,
            root,
            art_cost,
            art_to_root: vec![true; node_num],
            pi: vec![0.0; all],
            parent: vec![NONE; all],
            pred: vec![NONE; all],
            pred_up: vec![true; all],
            pred_flow: vec![0.0; all],
            thread: vec![0; all],
            rev_thread: vec![0; all],
            succ_num: vec![0; all],
            last_succ: vec![0; all],
            dirty_revs: Vec::new(),
            in_tree: ArcMask::new(arc_num),
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            next_arc: 0,
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
        };

        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = all;
        s.last_succ[root] = node_num - 1;
        #[allow(clippy::needless_range_loop)]
        for u in 0..node_num {
            s.parent[u] = root;
            s.pred[u] = arc_num + u;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            if supply[u] >= 0.0 {
                s.art_to_root[u] = true;
                s.pred_up[u] = true;
                s.pi[u] = 0.0;
                s.pred_flow[u] = supply[u];
            } else {
                s.art_to_root[u] = false;
                s.pred_up[u] = false;
                s.pi[u] = art_cost;
                s.pred_flow[u] = -supply[u];
            }
        }
        s
    }

    fn endpoints(&self, arc: usize) -> (usize, usize) {
        if arc < self.arc_num {
            self.net.endpoints(arc)
        } else {
            let u = arc - self.arc_num;
            if self.art_to_root[u] {
                (u, self.root)
            } else {
                (self.root, u)
            }
        }
    }

    fn cost(&self, arc: usize) -> f64 {
        if arc < self.arc_num {
            self.net.cost(arc)
        } else if self.art_to_root[arc - self.arc_num] {
            0.0
        } else {
            self.art_cost
        }
    }

    fn improves(&self, best: &Candidate) -> bool {
        if best.arc == NONE {
            return false;
        }
        let (s, t) = self.net.endpoints(best.arc);
        let scale = self.pi[s]
            .abs()
            .max(self.pi[t].abs())
            .max(self.net.cost(best.arc).abs());
        best.reduced_cost < -PRICE_EPS * scale
    }

    /// Block search: scan blocks cyclically from where the last search
    /// stopped and take the best arc of the first block that has one.
    fn find_entering_arc(&mut self) -> bool {
        let m = self.arc_num;
        if m == 0 {
            return false;
        }
        let mut best = Candidate {
            reduced_cost: 0.0,
            arc: NONE,
        };
        let mut scanned = 0;
        let mut pos = self.next_arc;
        while scanned < m {
            let len = self.block_size.min(m - pos).min(m - scanned);
            self.net.price(pos..pos + len, &self.pi, &self.in_tree, &mut best);
            scanned += len;
            pos += len;
            if pos == m {
                pos = 0;
            }
            if self.improves(&best) {
                self.next_arc = pos;
                self.in_arc = best.arc;
                return true;
            }
        }
        false
    }

    fn find_join_node(&mut self) {
        let (mut u, mut v) = self.endpoints(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> Result<()> {
        let (first, second) = self.endpoints(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;

        let mut u = first;
        while u != self.join {
            let d = if self.pred_up[u] {
                self.pred_flow[u].max(0.0)
            } else {
                f64::INFINITY
            };
            if d < delta {
                delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let d = if self.pred_up[u] {
                f64::INFINITY
            } else {
                self.pred_flow[u].max(0.0)
            };
            if d <= delta {
                delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if !delta.is_finite() {
            return Err(Error::Solver("unbounded pivot cycle".into()));
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        Ok(())
    }

    fn change_flow(&mut self) {
        let (src, dst) = self.endpoints(self.in_arc);
        let val = self.delta;
        if val > 0.0 {
            let mut u = src;
            while u != self.join {
                self.pred_flow[u] += if self.pred_up[u] { -val } else { val };
                u = self.parent[u];
            }
            let mut u = dst;
            while u != self.join {
                self.pred_flow[u] += if self.pred_up[u] { val } else { -val };
                u = self.parent[u];
            }
        }
        let out_arc = self.pred[self.u_out];
        if out_arc < self.arc_num {
            self.in_tree.remove(out_arc);
        }
        self.in_tree.insert(self.in_arc);
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;
        let in_up = u_in == self.endpoints(in_arc).0;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_up[u_in] = in_up;
            self.pred_flow[u_in] = self.delta;

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            // When old_rev_thread is v_in, join and v_out coincide.
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // Re-hang the stem (u_in .. u_out) below v_in, fixing the thread.
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            // Shift pred arcs (and their flows) one step along the stem.
            let mut tmp_sc = 0;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_up[u] = !self.pred_up[p];
                self.pred_flow[u] = self.pred_flow[p];
                tmp_sc += self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_up[u_in] = in_up;
            self.pred_flow[u_in] = self.delta;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let c = self.cost(self.in_arc);
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - if self.pred_up[self.u_in] { c } else { -c };
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }
}
