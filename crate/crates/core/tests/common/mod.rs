//! Independent reference implementations and generators shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use shapegrid::cube::{Dims, Origin, Sequence3D};
use shapegrid::grid::{CellKey, FatalityField};

/// Minimum-cost transportation plan by enumerating every basis of the
/// transportation polytope: each vertex is the unique solution supported on
/// some spanning tree of `m + n - 1` cells.
pub fn vertex_enumeration_ot(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let k = m + n - 1;
    let cells: Vec<usize> = (0..m * n).collect();
    let mut best = f64::INFINITY;
    for subset in combinations(&cells, k) {
        if let Some(flow) = tree_solution(&subset, supply, demand) {
            if flow.iter().all(|&(_, f)| f >= -1e-12) {
                let obj: f64 = flow.iter().map(|&(c, f)| f.max(0.0) * cost[c]).sum();
                best = best.min(obj);
            }
        }
    }
    best
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

/// Flows on `cells` if they form a spanning tree of the row/column graph,
/// found by repeatedly settling a leaf node.
fn tree_solution(cells: &[usize], supply: &[f64], demand: &[f64]) -> Option<Vec<(usize, f64)>> {
    let (m, n) = (supply.len(), demand.len());
    let mut row_left: Vec<f64> = supply.to_vec();
    let mut col_left: Vec<f64> = demand.to_vec();
    let mut open: Vec<usize> = cells.to_vec();
    let mut flows = Vec::new();
    while !open.is_empty() {
        let mut row_deg = vec![0usize; m];
        let mut col_deg = vec![0usize; n];
        for &c in &open {
            row_deg[c / n] += 1;
            col_deg[c % n] += 1;
        }
        let leaf = open.iter().position(|&c| row_deg[c / n] == 1 || col_deg[c % n] == 1)?;
        let c = open.swap_remove(leaf);
        let (i, j) = (c / n, c % n);
        // A leaf row or column sends all that remains through its only cell.
        let f = if row_deg[i] == 1 && (col_deg[j] != 1 || open.is_empty()) {
            row_left[i]
        } else {
            col_left[j]
        };
        row_left[i] -= f;
        col_left[j] -= f;
        flows.push((c, f));
    }
    let balanced = row_left.iter().chain(&col_left).all(|r| r.abs() < 1e-9);
    balanced.then_some(flows)
}

/// Components of `cells` where two cells connect when their Chebyshev
/// distance is at most `radius`, found by breadth-first flood fill. Returned
/// in order of each component's smallest cell.
pub fn flood_fill_components(cells: &[(i64, i64)], radius: i64) -> Vec<BTreeSet<(i64, i64)>> {
    let all: BTreeSet<(i64, i64)> = cells.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in &all {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some((lat, lon)) = queue.pop_front() {
            comp.insert((lat, lon));
            for dl in -radius..=radius {
                for dn in -radius..=radius {
                    let nb = (lat + dl, lon + dn);
                    if all.contains(&nb) && seen.insert(nb) {
                        queue.push_back(nb);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Connected components of the graph on `0..n` with an edge where `edge(i, j)`,
/// by depth-first search, each sorted, ordered by smallest member.
pub fn brute_force_components(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut comp = vec![usize::MAX; n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![s];
        comp[s] = id;
        let mut members = Vec::new();
        while let Some(x) = stack.pop() {
            members.push(x);
            for (y, c) in comp.iter_mut().enumerate() {
                if *c == usize::MAX && y != x && edge(x, y) {
                    *c = id;
                    stack.push(y);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Random non-negative integer sequence with at least one non-zero cell.
pub fn random_sequence<R: Rng>(rng: &mut R, dims: Dims, density: f64, max_value: u32) -> Sequence3D {
    let origin = Origin { lat: 0, lon: 0, t: 0 };
    loop {
        let s = Sequence3D::from_fn(origin, dims, |_, _, _| {
            if rng.gen_bool(density) {
                rng.gen_range(1..=max_value) as f64
            } else {
                0.0
            }
        });
        if !s.is_all_zero() {
            return s;
        }
    }
}

/// Field with zero rows at both corners so its extent is fixed.
pub fn field_with_extent(rows: Vec<(CellKey, u64)>, n_lat: i64, n_lon: i64, n_months: i64) -> FatalityField {
    let mut all = rows;
    all.push((CellKey::new(0, 0, 0), 0));
    all.push((CellKey::new(n_lon - 1, n_lat - 1, n_months - 1), 0));
    FatalityField::from_rows(all)
}

/// Rows that place `seq` at `origin`.
pub fn plant(seq: &Sequence3D, origin: Origin) -> Vec<(CellKey, u64)> {
    seq.iter()
        .filter(|&(_, _, _, v)| v > 0.0)
        .map(|(la, lo, t, v)| {
            (
                CellKey::new(origin.lon + lo as i64, origin.lat + la as i64, origin.t + t as i64),
                v as u64,
            )
        })
        .collect()
}

/// Input and continuation for the planted forecasting scenario: a 3x3 box
/// with heavy corners that ramp up over 12 months, followed by a sparse
/// 6-month future.
pub fn planted_pattern() -> (Sequence3D, Sequence3D) {
    let o = Origin { lat: 0, lon: 0, t: 0 };
    let pattern = Sequence3D::from_fn(o, Dims::new(3, 3, 12), |la, lo, t| {
        let corner = la != 1 && lo != 1;
        let center = la == 1 && lo == 1;
        if corner {
            5.0 + 4.0 * t as f64
        } else if center {
            1.0
        } else {
            2.0 + (t % 2) as f64
        }
    });
    let mut future = Sequence3D::zeros(o, Dims::new(3, 3, 6));
    for &(la, lo, t, v) in &[
        (0, 0, 0, 12.0),
        (1, 1, 0, 4.0),
        (0, 2, 1, 9.0),
        (2, 2, 1, 3.0),
        (1, 0, 2, 7.0),
        (2, 1, 2, 5.0),
        (0, 1, 3, 2.0),
        (2, 0, 3, 6.0),
        (1, 2, 4, 8.0),
        (1, 1, 4, 1.0),
        (0, 0, 5, 3.0),
        (2, 2, 5, 10.0),
    ] {
        future.set(la, lo, t, v);
    }
    (pattern, future)
}
