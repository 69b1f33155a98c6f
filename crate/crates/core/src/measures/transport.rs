//! Primal network simplex for the dense, uncapacitated transportation
//! problem.
//!
//! The implementation follows the classical spanning-tree scheme with an
//! artificial root, a thread/reverse-thread tree encoding, block-search
//! pivoting and Cunningham's strongly feasible leaving-arc rule (which rules
//! out cycling on degenerate pivots).

use crate::error::{Error, Result};

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

/// Optimal value and the nonzero entries of an optimal plan.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub cost: f64,
    pub plan: Vec<(usize, usize, f64)>,
}

/// Solve `min <C, P>` over plans with row sums `supply` and column sums
/// `demand`. `cost` is row-major `supply.len() x demand.len()`, nonnegative.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let n1 = supply.len();
    let n2 = demand.len();
    if n1 == 0 || n2 == 0 {
        return Err(Error::Transport("empty side".into()));
    }
    if cost.len() != n1 * n2 {
        return Err(Error::Transport("cost matrix has wrong size".into()));
    }
    let mut ns = NetworkSimplex::new(supply, demand, cost);
    ns.run()?;
    let mut plan = Vec::new();
    let mut total = 0.0;
    for e in 0..n1 * n2 {
        let f = ns.flow[e];
        if f != 0.0 {
            plan.push((e / n2, e % n2, f));
            total += f * cost[e];
        }
    }
    Ok(TransportSolution { cost: total, plan })
}

struct NetworkSimplex {
    node_num: usize,
    arc_num: usize,
    root: usize,
    source: Vec<u32>,
    target: Vec<u32>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,
    block_size: usize,
    next_arc: usize,
    tolerance: f64,
    // pivot scratch
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

const NONE: usize = usize::MAX;

impl NetworkSimplex {
    fn new(supply: &[f64], demand: &[f64], cost: &[f64]) -> Self {
        let n1 = supply.len();
        let n2 = demand.len();
        let node_num = n1 + n2;
        let arc_num = n1 * n2;
        let all_arcs = arc_num + node_num;
        let root = node_num;

        let mut source = Vec::with_capacity(all_arcs);
        let mut target = Vec::with_capacity(all_arcs);
        for i in 0..n1 {
            for j in 0..n2 {
                source.push(i as u32);
                target.push((n1 + j) as u32);
            }
        }
        source.resize(all_arcs, 0);
        target.resize(all_arcs, 0);

        let max_cost = cost.iter().fold(0.0_f64, |m, &c| m.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;
        let mut costs = cost.to_vec();
        costs.resize(all_arcs, 0.0);

        let mut ns = Self {
            node_num,
            arc_num,
            root,
            source,
            target,
            cost: costs,
            flow: vec![0.0; all_arcs],
            state: vec![STATE_LOWER; all_arcs],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            next_arc: 0,
            tolerance: 1e-12 * max_cost.max(f64::MIN_POSITIVE),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
        };

        // Initial strongly feasible tree: every node hangs off the root
        // through an artificial arc.
        ns.thread[root] = 0;
        ns.rev_thread[0] = root;
        ns.succ_num[root] = node_num + 1;
        ns.last_succ[root] = root - 1;
        ns.pi[root] = 0.0;
        for u in 0..node_num {
            let e = arc_num + u;
            let s = if u < n1 { supply[u] } else { -demand[u - n1] };
            ns.parent[u] = root;
            ns.pred[u] = e;
            ns.thread[u] = u + 1;
            ns.rev_thread[u + 1] = u;
            ns.succ_num[u] = 1;
            ns.last_succ[u] = u;
            ns.state[e] = STATE_TREE;
            if s >= 0.0 {
                ns.pred_dir[u] = DIR_UP;
                ns.pi[u] = 0.0;
                ns.source[e] = u as u32;
                ns.target[e] = root as u32;
                ns.flow[e] = s;
                ns.cost[e] = 0.0;
            } else {
                ns.pred_dir[u] = DIR_DOWN;
                ns.pi[u] = art_cost;
                ns.source[e] = root as u32;
                ns.target[e] = u as u32;
                ns.flow[e] = -s;
                ns.cost[e] = art_cost;
            }
        }
        ns
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        self.state[e] as f64
            * (self.cost[e] + self.pi[self.source[e] as usize] - self.pi[self.target[e] as usize])
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = -self.tolerance;
        let mut found = false;
        let mut cnt = self.block_size;
        let mut e = self.next_arc;
        for _ in 0..self.arc_num {
            let c = self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
                found = true;
            }
            e += 1;
            if e == self.arc_num {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
        }
        if found {
            self.next_arc = e;
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc] as usize;
        let mut v = self.target[self.in_arc] as usize;
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
        let (first, second) = if self.state[self.in_arc] == STATE_LOWER {
            (self.source[self.in_arc] as usize, self.target[self.in_arc] as usize)
        } else {
            (self.target[self.in_arc] as usize, self.source[self.in_arc] as usize)
        };
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 0 {
            return Err(Error::Transport("unbounded pivot cycle".into()));
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
        if self.delta > 0.0 {
            let val = self.state[self.in_arc] as f64 * self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc] as usize;
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc] as usize;
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out_arc = self.pred[self.u_out];
        // The leaving arc is saturated at its lower bound; clamp rounding noise.
        self.flow[out_arc] = 0.0;
        self.state[out_arc] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] as usize { DIR_UP } else { DIR_DOWN };

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
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

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

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                // p was a descendant of u in the old tree.
                tmp_sc += self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] as usize { DIR_UP } else { DIR_DOWN };
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
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in] - self.pi[u_in] - self.pred_dir[u_in] as f64 * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self) -> Result<()> {
        let _ = self.root;
        // Generous cap; the block-search simplex needs far fewer pivots.
        let max_pivots = 50 * (self.node_num + 1) * (self.node_num + 1) + 1000;
        let mut pivots = 0usize;
        while self.find_entering_arc() {
            self.find_join_node();
            self.find_leaving_arc()?;
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::Transport("pivot limit reached".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_splitting_line_example() {
        // delta_0 -> (delta_{-1} + delta_1) / 2
        let sol = solve_transport(&[1.0], &[0.5, 0.5], &[1.0, 1.0]).unwrap();
        assert!((sol.cost - 1.0).abs() < 1e-15);
    }

    #[test]
    fn plan_marginals_hold() {
        let supply = [2.0, 1.0, 3.0];
        let demand = [1.0, 4.0, 1.0];
        let cost = [4.0, 1.0, 3.0, 2.0, 5.0, 0.5, 1.0, 2.0, 7.0];
        let sol = solve_transport(&supply, &demand, &cost).unwrap();
        let mut rows = [0.0; 3];
        let mut cols = [0.0; 3];
        for &(i, j, f) in &sol.plan {
            assert!(f > 0.0);
            rows[i] += f;
            cols[j] += f;
        }
        assert_eq!(rows, supply);
        assert_eq!(cols, demand);
        // Enumerated by hand over the vertices of this 3x3 polytope: row 0
        // sends 2 to col 1 (cost 2); row 1 sends 1 to col 2 (0.5); row 2
        // sends 1 to col 0 and 2 to col 1 (1 + 4).
        assert!((sol.cost - 7.5).abs() < 1e-12, "{}", sol.cost);
    }
}
