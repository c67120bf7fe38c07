//! Exact solver for the dense transportation problem.
//!
//! Simplex on the transportation polytope with u-v (dual) pricing: a
//! northwest-corner basis, Dantzig entering rule with a Bland fallback for
//! anti-cycling, and explicit dual-feasibility certification at exit. Flows
//! stay exact sums and differences of the input weights, so equal-weight
//! instances produce bit-exact permutation couplings.

use crate::error::{LabError, Result};

/// Sparse coupling entries `(source, target, flow)` of an optimal plan.
pub type PlanEntries = Vec<(usize, usize, f64)>;

struct Basis {
    /// basic arcs (i, j, flow)
    arcs: Vec<(usize, usize, f64)>,
    /// node -> incident basic arc indices (sources 0..m, sinks m..m+n)
    adj: Vec<Vec<usize>>,
    m: usize,
}

impl Basis {
    fn node_of_source(&self, i: usize) -> usize {
        i
    }

    fn node_of_sink(&self, j: usize) -> usize {
        self.m + j
    }

    fn add_arc(&mut self, i: usize, j: usize, flow: f64) {
        let idx = self.arcs.len();
        self.arcs.push((i, j, flow));
        let (a, b) = (self.node_of_source(i), self.node_of_sink(j));
        self.adj[a].push(idx);
        self.adj[b].push(idx);
    }

    fn remove_arc(&mut self, idx: usize) {
        let (i, j, _) = self.arcs[idx];
        let (a, b) = (self.node_of_source(i), self.node_of_sink(j));
        self.adj[a].retain(|&k| k != idx);
        self.adj[b].retain(|&k| k != idx);
        // swap-remove and fix the moved index
        let last = self.arcs.len() - 1;
        self.arcs.swap_remove(idx);
        if idx != last {
            let (i2, j2, _) = self.arcs[idx];
            let (a2, b2) = (self.node_of_source(i2), self.node_of_sink(j2));
            for v in [a2, b2] {
                for k in self.adj[v].iter_mut() {
                    if *k == last {
                        *k = idx;
                    }
                }
            }
        }
    }

    /// Tree path between two nodes as a list of (arc index, forward flag),
    /// where forward means traversal source -> sink.
    fn path(&self, from: usize, to: usize) -> Vec<(usize, bool)> {
        let n_nodes = self.adj.len();
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n_nodes]; // (node, arc)
        let mut seen = vec![false; n_nodes];
        let mut queue = std::collections::VecDeque::new();
        seen[from] = true;
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            if u == to {
                break;
            }
            for &aidx in &self.adj[u] {
                let (i, j, _) = self.arcs[aidx];
                let v = if self.node_of_source(i) == u {
                    self.node_of_sink(j)
                } else {
                    self.node_of_source(i)
                };
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = Some((u, aidx));
                    queue.push_back(v);
                }
            }
        }
        let mut out = vec![];
        let mut cur = to;
        while cur != from {
            let (p, aidx) = prev[cur].expect("basis tree connected");
            let (i, _, _) = self.arcs[aidx];
            // forward if traversed source -> sink
            let forward = self.node_of_source(i) == p;
            out.push((aidx, forward));
            cur = p;
        }
        out.reverse();
        out
    }
}

/// Exact optimal coupling of `supply` to `demand` under the given cost
/// matrix (row-major `cost[i][j]`, arbitrary sign). Masses must agree to
/// `1e-12` in absolute terms.
pub fn solve_transport(
    cost: &[Vec<f64>],
    supply: &[f64],
    demand: &[f64],
) -> Result<PlanEntries> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(LabError::config_plain("transport supports must be nonempty"));
    }
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(LabError::config_plain("cost matrix shape mismatch"));
    }
    if supply.iter().chain(demand.iter()).any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(LabError::config_plain("weights must be nonnegative"));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    let mismatch = (total_s - total_d).abs();
    if mismatch > 1e-12 {
        return Err(LabError::InfeasibleWeights { mismatch });
    }

    // Northwest-corner basic feasible solution (spanning tree of m+n-1 arcs,
    // padding with degenerate zero-flow arcs when both sides saturate).
    let mut basis = Basis {
        arcs: vec![],
        adj: vec![vec![]; m + n],
        m,
    };
    {
        let mut rem_s = supply.to_vec();
        let mut rem_d = demand.to_vec();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let push = rem_s[i].min(rem_d[j]);
            basis.add_arc(i, j, push);
            rem_s[i] -= push;
            rem_d[j] -= push;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if rem_s[i] <= rem_d[j] && i < m - 1 {
                rem_s[i] = 0.0;
                i += 1;
            } else if j < n - 1 {
                rem_d[j] = 0.0;
                j += 1;
            } else {
                rem_s[i] = 0.0;
                i += 1;
            }
        }
    }

    let scale = cost
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &c| a.max(c.abs()))
        .max(1.0);
    let tol = 1e-12 * scale;
    let max_iters = 200_000usize.max(200 * (m + n));
    let bland_after = 50 * (m + n);

    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; n];
    for iter in 0..max_iters {
        // Duals from the basis tree: u_0 = 0, c_ij = u_i + v_j on basic arcs.
        let mut known = vec![false; m + n];
        known[0] = true;
        u[0] = 0.0;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(0usize);
        while let Some(node) = queue.pop_front() {
            for &aidx in &basis.adj[node] {
                let (i, j, _) = basis.arcs[aidx];
                let (a, b) = (i, m + j);
                let other = if a == node { b } else { a };
                if !known[other] {
                    known[other] = true;
                    if other >= m {
                        v[other - m] = cost[i][j] - u[i];
                    } else {
                        u[other] = cost[i][j] - v[j];
                    }
                    queue.push_back(other);
                }
            }
        }

        // Entering arc: most negative reduced cost (Dantzig), switching to
        // first-negative (Bland) after a cap to guarantee termination.
        let mut enter: Option<(usize, usize, f64)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                let rc = cost[i][j] - u[i] - v[j];
                if rc < -tol {
                    if iter >= bland_after {
                        enter = Some((i, j, rc));
                        break 'scan;
                    }
                    match enter {
                        Some((_, _, best)) if rc >= best => {}
                        _ => enter = Some((i, j, rc)),
                    }
                }
            }
        }
        let Some((ei, ej, _)) = enter else {
            // dual-feasible: optimal
            let mut out: PlanEntries = basis
                .arcs
                .iter()
                .filter(|&&(_, _, f)| f > 0.0)
                .map(|&(i, j, f)| (i, j, f))
                .collect();
            out.sort_by_key(|&(i, j, _)| (i, j));
            return Ok(out);
        };

        // Unique cycle: tree path from the entering sink back to its source.
        // With +delta on the entering arc, conservation forces arcs traversed
        // sink -> source (forward = false) to lose delta and the others to
        // gain it; the leaving arc is the smallest-flow loser.
        let path = basis.path(basis.node_of_sink(ej), basis.node_of_source(ei));
        let mut leave: Option<(usize, f64)> = None;
        for &(aidx, forward) in &path {
            if forward {
                continue;
            }
            let f = basis.arcs[aidx].2;
            match leave {
                Some((lidx, lf)) => {
                    if f < lf || (f == lf && aidx < lidx) {
                        leave = Some((aidx, f));
                    }
                }
                None => leave = Some((aidx, f)),
            }
        }
        let Some((leave_idx, delta)) = leave else {
            return Err(LabError::NonConvergence {
                reason: "transport pivot found no leaving arc".into(),
                residual: f64::NAN,
            });
        };
        for &(aidx, forward) in &path {
            if forward {
                basis.arcs[aidx].2 += delta;
            } else {
                basis.arcs[aidx].2 -= delta;
            }
        }
        basis.remove_arc(leave_idx);
        basis.add_arc(ei, ej, delta);
    }
    Err(LabError::NonConvergence {
        reason: "transport simplex iteration cap".into(),
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plan_cost(entries: &PlanEntries, cost: &[Vec<f64>]) -> f64 {
        entries.iter().map(|&(i, j, f)| f * cost[i][j]).sum()
    }

    fn brute_force_assignment(cost: &[Vec<f64>], w: f64) -> f64 {
        // min over permutations, accumulated in row order like the plan cost
        let n = cost.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        fn heap(k: usize, perm: &mut Vec<usize>, cost: &[Vec<f64>], w: f64, best: &mut f64) {
            if k == 1 {
                let c: f64 = perm.iter().enumerate().map(|(i, &j)| w * cost[i][j]).sum();
                if c < *best {
                    *best = c;
                }
                return;
            }
            for i in 0..k {
                heap(k - 1, perm, cost, w, best);
                if k % 2 == 0 {
                    perm.swap(i, k - 1);
                } else {
                    perm.swap(0, k - 1);
                }
            }
        }
        heap(n, &mut perm, cost, w, &mut best);
        best
    }

    #[test]
    fn single_pair() {
        let plan = solve_transport(&[vec![3.0]], &[2.5], &[2.5]).unwrap();
        assert_eq!(plan, vec![(0, 0, 2.5)]);
    }

    #[test]
    fn mass_mismatch_rejected() {
        let r = solve_transport(&[vec![1.0]], &[1.0], &[1.0 + 1e-9]);
        assert!(matches!(r, Err(LabError::InfeasibleWeights { .. })));
    }

    #[test]
    fn equal_weight_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let n = 2 + (trial % 5);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let w = 1.0 / n as f64;
            let weights = vec![w; n];
            let plan = solve_transport(&cost, &weights, &weights).unwrap();
            // plan is a permutation with exact weights
            assert_eq!(plan.len(), n);
            for &(_, _, f) in &plan {
                assert_eq!(f, w);
            }
            let expect = brute_force_assignment(&cost, w);
            assert_eq!(plan_cost(&plan, &cost), expect);
        }
    }

    #[test]
    fn marginals_exact_on_uneven_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, n) = (7, 5);
        let cost: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(0.0..4.0)).collect())
            .collect();
        let mut supply: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let mut demand: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let ts: f64 = supply.iter().sum();
        let td: f64 = demand.iter().sum();
        for d in demand.iter_mut() {
            *d *= ts / td;
        }
        // re-balance exactly
        let drift: f64 = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
        supply[0] -= drift;
        let plan = solve_transport(&cost, &supply, &demand).unwrap();
        let mut rows = vec![0.0; m];
        let mut cols = vec![0.0; n];
        for &(i, j, f) in &plan {
            assert!(f > 0.0);
            rows[i] += f;
            cols[j] += f;
        }
        for i in 0..m {
            assert_abs_diff_eq!(rows[i], supply[i], epsilon = 1e-12);
        }
        for j in 0..n {
            assert_abs_diff_eq!(cols[j], demand[j], epsilon = 1e-12);
        }
        // no worse than the independent coupling
        let total: f64 = supply.iter().sum();
        let indep: f64 = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| supply[i] * demand[j] / total * cost[i][j])
                    .sum::<f64>()
            })
            .sum();
        assert!(plan_cost(&plan, &cost) <= indep + 1e-12);
    }

    #[test]
    fn monge_sorted_line_gives_identity_matching() {
        // sorted supports with quadratic-type costs: monotone matching wins
        let n = 8;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = (0..n).map(|i| 0.05 + i as f64 * 0.1).collect();
        let cost: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| ys.iter().map(|&y| (x - y) * (x - y)).collect())
            .collect();
        let w = vec![1.0 / n as f64; n];
        let plan = solve_transport(&cost, &w, &w).unwrap();
        for (k, &(i, j, _)) in plan.iter().enumerate() {
            assert_eq!(i, k);
            assert_eq!(j, k);
        }
        assert_eq!(plan_cost(&plan, &cost), brute_force_assignment(&cost, w[0]));
    }

    #[test]
    fn degenerate_supplies_terminate() {
        // many exact ties exercise degenerate pivots
        let n = 6;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| ((i + j) % 3) as f64).collect())
            .collect();
        let w = vec![0.25; n];
        let plan = solve_transport(&cost, &w, &w).unwrap();
        let c = plan_cost(&plan, &cost);
        assert_eq!(c, brute_force_assignment(&cost, 0.25));
    }

    #[test]
    fn medium_instance_dual_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n) = (60, 60);
        let cost: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let w1 = vec![1.0 / m as f64; m];
        let w2 = vec![1.0 / n as f64; n];
        let plan = solve_transport(&cost, &w1, &w2).unwrap();
        let c = plan_cost(&plan, &cost);
        // compare against a cheap lower bound: sum of row minima
        let lower: f64 = cost
            .iter()
            .map(|r| r.iter().cloned().fold(f64::INFINITY, f64::min) / m as f64)
            .sum();
        assert!(c >= lower - 1e-12);
    }
}
