//! Transportation simplex (primal network simplex on a complete bipartite
//! graph) for balanced problems.
//!
//! The basis is a spanning tree over `m` supply nodes and `n` demand nodes
//! with `m + n - 1` basic cells. Entering cells are chosen by most negative
//! reduced cost; after a run of degenerate pivots the solver switches to
//! Bland's smallest-index rule for both entering and leaving cells, which
//! rules out cycling.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const OPTIMALITY_TOL: f64 = 1e-9;
const DEGENERATE_FLOW: f64 = 1e-15;

/// Optimal flows, row-major `m x n`.
pub(crate) fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let m = supply.len();
    let n = demand.len();
    assert!(m > 0 && n > 0, "transport problem needs both sides");
    assert_eq!(cost.len(), m * n);
    let mut solver = Solver::new(supply, demand, cost);
    solver.run()?;
    Ok(solver.flow)
}

struct Solver<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    flow: Vec<f64>,
    basic: Vec<bool>,
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(supply: &[f64], demand: &[f64], cost: &'a [f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut s = Self {
            m,
            n,
            cost,
            flow: vec![0.0; m * n],
            basic: vec![false; m * n],
            row_adj: vec![Vec::new(); m],
            col_adj: vec![Vec::new(); n],
            u: vec![0.0; m],
            v: vec![0.0; n],
        };
        s.northwest_corner(supply, demand);
        s
    }

    /// Staircase starting basis: exactly `m + n - 1` cells forming a tree,
    /// degenerate zero cells included.
    fn northwest_corner(&mut self, supply: &[f64], demand: &[f64]) {
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = s[i].min(d[j]).max(0.0);
            self.flow[i * self.n + j] = q;
            self.set_basic(i, j, true);
            s[i] -= q;
            d[j] -= q;
            if i == self.m - 1 && j == self.n - 1 {
                break;
            }
            if i == self.m - 1 {
                j += 1;
            } else if j == self.n - 1 || s[i] <= d[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    fn set_basic(&mut self, i: usize, j: usize, on: bool) {
        self.basic[i * self.n + j] = on;
        if on {
            self.row_adj[i].push(j);
            self.col_adj[j].push(i);
        } else {
            self.row_adj[i].retain(|&c| c != j);
            self.col_adj[j].retain(|&r| r != i);
        }
    }

    fn potentials(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut seen_row = vec![false; m];
        let mut seen_col = vec![false; n];
        // Nodes 0..m are rows, m..m+n are columns.
        let mut queue = VecDeque::with_capacity(m + n);
        self.u[0] = 0.0;
        seen_row[0] = true;
        queue.push_back(0usize);
        while let Some(node) = queue.pop_front() {
            if node < m {
                let i = node;
                for &j in &self.row_adj[i] {
                    if !seen_col[j] {
                        seen_col[j] = true;
                        self.v[j] = self.cost[i * n + j] - self.u[i];
                        queue.push_back(m + j);
                    }
                }
            } else {
                let j = node - m;
                for &i in &self.col_adj[j] {
                    if !seen_row[i] {
                        seen_row[i] = true;
                        self.u[i] = self.cost[i * n + j] - self.v[j];
                        queue.push_back(i);
                    }
                }
            }
        }
        debug_assert!(seen_row.iter().all(|&s| s) && seen_col.iter().all(|&s| s));
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let n = self.n;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let ui = self.u[i];
            let row = i * n;
            for j in 0..n {
                let k = row + j;
                if self.basic[k] {
                    continue;
                }
                let rc = self.cost[k] - ui - self.v[j];
                if rc < -OPTIMALITY_TOL {
                    if bland {
                        return Some(k);
                    }
                    if best.is_none_or(|(_, b)| rc < b) {
                        best = Some((k, rc));
                    }
                }
            }
        }
        best.map(|(k, _)| k)
    }

    /// Tree path from row `start` to column `target` as a list of cells.
    fn tree_path(&self, start: usize, target: usize) -> Vec<usize> {
        let (m, n) = (self.m, self.n);
        let mut parent = vec![usize::MAX; m + n];
        parent[start] = start;
        let mut queue = VecDeque::new();
        queue.push_back(start);
        let goal = m + target;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            if node < m {
                for &j in &self.row_adj[node] {
                    if parent[m + j] == usize::MAX {
                        parent[m + j] = node;
                        queue.push_back(m + j);
                    }
                }
            } else {
                for &i in &self.col_adj[node - m] {
                    if parent[i] == usize::MAX {
                        parent[i] = node;
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = goal;
        while node != start {
            let p = parent[node];
            let (i, j) = if node < m { (node, p - m) } else { (p, node - m) };
            cells.push(i * n + j);
            node = p;
        }
        cells.reverse();
        cells
    }

    fn run(&mut self) -> Result<()> {
        let max_pivots = 1000 + 50 * self.m * self.n;
        let degenerate_limit = 2 * (self.m + self.n);
        let mut degenerate_run = 0usize;
        let mut bland = false;
        for _ in 0..max_pivots {
            self.potentials();
            let Some(enter) = self.entering(bland) else {
                return Ok(());
            };
            let (ei, ej) = (enter / self.n, enter % self.n);
            // Path from row ei to column ej; cells at even positions lose flow.
            let path = self.tree_path(ei, ej);
            let mut leave = usize::MAX;
            let mut theta = f64::INFINITY;
            for &cell in path.iter().step_by(2) {
                let f = self.flow[cell];
                if f < theta || (f == theta && cell < leave) {
                    theta = f;
                    leave = cell;
                }
            }
            debug_assert!(leave != usize::MAX);
            for (pos, &cell) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[cell] = (self.flow[cell] - theta).max(0.0);
                } else {
                    self.flow[cell] += theta;
                }
            }
            self.flow[enter] = theta;
            self.flow[leave] = 0.0;
            self.set_basic(leave / self.n, leave % self.n, false);
            self.set_basic(ei, ej, true);

            if theta <= DEGENERATE_FLOW {
                degenerate_run += 1;
                if degenerate_run > degenerate_limit {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
        Err(Error::SolverStalled(max_pivots))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(flow: &[f64], cost: &[f64]) -> f64 {
        flow.iter().zip(cost).map(|(f, c)| f * c).sum()
    }

    #[test]
    fn two_by_two_prefers_diagonal() {
        let cost = [0.0, 1.0, 1.0, 0.0];
        let flow = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &cost).unwrap();
        assert_eq!(objective(&flow, &cost), 0.0);
    }

    #[test]
    fn anti_diagonal_start_is_repaired() {
        // North-west corner starts on the expensive diagonal.
        let cost = [5.0, 1.0, 1.0, 5.0];
        let flow = solve_transport(&[0.3, 0.7], &[0.7, 0.3], &cost).unwrap();
        // All mass can move off the diagonal: 0.3 * 1 + 0.7 * 1.
        assert!((objective(&flow, &cost) - 1.0).abs() < 1e-12);
        assert_eq!(flow[0] + flow[3], 0.0);
    }

    #[test]
    fn single_row() {
        let cost = [1.0, 2.0, 3.0];
        let flow = solve_transport(&[1.0], &[0.2, 0.3, 0.5], &cost).unwrap();
        assert_eq!(flow, vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn heavily_degenerate_uniform() {
        // Equal masses on both sides generate many zero-flow basic cells.
        let n = 12;
        let mass = vec![1.0 / n as f64; n];
        let cost: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                ((i * 7 + j * 3) % 11) as f64 * 0.1 + if (i + 5) % n == j { -20.0 } else { 0.0 }
            })
            .collect();
        let flow = solve_transport(&mass, &mass, &cost).unwrap();
        let obj = objective(&flow, &cost);
        // The shifted permutation is strictly cheapest.
        let perm: f64 = (0..n).map(|i| cost[i * n + (i + 5) % n]).sum::<f64>() / n as f64;
        assert!((obj - perm).abs() < 1e-12);
    }
}
