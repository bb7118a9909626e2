//! Earth Mover's Distance between density cubes and the similarity gate.

use std::io::Write;

use crate::cube::{rotate90, DensityCube};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::simplex::solve_transport;

const MASS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n_source: usize,
    pub n_target: usize,
    /// Row-major `n_source x n_target` flows.
    pub gamma: Vec<f64>,
    /// Row-major Euclidean ground distances.
    pub cost: Vec<f64>,
    pub objective: f64,
}

impl TransportPlan {
    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n_target + j]
    }

    /// Writes `src_idx,dst_idx,flow,cost` for every non-zero flow.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["src_idx", "dst_idx", "flow", "cost"])?;
        for i in 0..self.n_source {
            for j in 0..self.n_target {
                let f = self.flow(i, j);
                if f > 0.0 {
                    wtr.write_record([
                        i.to_string(),
                        j.to_string(),
                        f.to_string(),
                        self.cost[i * self.n_target + j].to_string(),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exact optimal transport between two unit-mass cubes.
pub fn solve_ot(source: &DensityCube, target: &DensityCube) -> Result<TransportPlan> {
    if source.points.is_empty() || target.points.is_empty() {
        return Err(Error::Validation("transport needs non-empty cubes".into()));
    }
    let supply: Vec<f64> = source.points.iter().map(|p| p.weight).collect();
    let mut demand: Vec<f64> = target.points.iter().map(|p| p.weight).collect();
    let source_mass: f64 = supply.iter().sum();
    let target_mass: f64 = demand.iter().sum();
    if (source_mass - target_mass).abs() > MASS_TOL {
        return Err(Error::MassMismatch {
            source_mass,
            target_mass,
        });
    }
    // Remove round-off imbalance so the problem is exactly balanced.
    let scale = source_mass / target_mass;
    for d in &mut demand {
        *d *= scale;
    }
    let cost: Vec<f64> = source
        .points
        .iter()
        .flat_map(|p| target.points.iter().map(move |q| p.distance(q)))
        .collect();
    let gamma = solve_transport(&supply, &demand, &cost)?;
    let objective = gamma.iter().zip(&cost).map(|(g, c)| g * c).sum();
    Ok(TransportPlan {
        n_source: supply.len(),
        n_target: demand.len(),
        gamma,
        cost,
        objective,
    })
}

/// Minimum transport cost over the four quarter-turns of `a`, with the
/// minimizing turn count (lowest on ties).
pub fn emd_with_rotation(a: &DensityCube, b: &DensityCube) -> Result<(f64, u8)> {
    let mut best = (f64::INFINITY, 0u8);
    for k in 0..4u8 {
        let value = solve_ot(&rotate90(a, k), b)?.objective;
        if value < best.0 {
            best = (value, k);
        }
    }
    Ok(best)
}

pub fn emd(a: &DensityCube, b: &DensityCube) -> Result<f64> {
    emd_with_rotation(a, b).map(|(v, _)| v)
}

/// `|tanh(ln(n1 / n2))|` evaluated as `|n1^2 - n2^2| / (n1^2 + n2^2)`, which
/// is the same function but exact in integer arithmetic up to the final
/// division.
pub fn active_ratio_counts(n1: usize, n2: usize) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::Validation(
            "active-cell ratio needs active cells on both sides".into(),
        ));
    }
    let a = (n1 as u128) * (n1 as u128);
    let b = (n2 as u128) * (n2 as u128);
    Ok(a.abs_diff(b) as f64 / (a + b) as f64)
}

pub fn active_ratio(a: &DensityCube, b: &DensityCube) -> Result<f64> {
    active_ratio_counts(a.n_active, b.n_active)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub similar: bool,
    pub emd: f64,
    pub r: f64,
    /// Quarter-turns applied to `a` that achieve `emd`.
    pub rotation: u8,
}

/// Both measures strictly below their thresholds.
pub fn passes(emd: f64, r: f64, thr1: f64, thr2: f64) -> bool {
    emd < thr1 && r < thr2
}

pub fn is_similar(a: &DensityCube, b: &DensityCube, params: &ModelParams) -> Result<Similarity> {
    let r = active_ratio(a, b)?;
    let (emd, rotation) = emd_with_rotation(a, b)?;
    Ok(Similarity {
        similar: passes(emd, r, params.thr1, params.thr2),
        emd,
        r,
        rotation,
    })
}

/// Lower bound on the rotation-minimized EMD: the transport cost can never
/// be below the distance between the two centroids.
pub fn emd_lower_bound(a: &DensityCube, b: &DensityCube) -> f64 {
    let cb = b.centroid();
    (0..4u8)
        .map(|k| {
            let ca = rotate90(a, k).centroid();
            ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2) + (ca[2] - cb[2]).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}
