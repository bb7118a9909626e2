//! The three 5x5x3 toy patterns used to contrast EMD with a spatial-lag
//! distance and a cell-wise distance, plus the regression check over them.

use crate::cube::{to_density_cube_with, DensityCube, Origin, Sequence3D};
use crate::error::Result;
use crate::evaluator::{euclidean_baseline, spatial_distance_baseline, SPATIAL_WEIGHTS};
use crate::params::CoordMode;
use crate::transport::solve_ot;

type MonthGrid = [[u32; 5]; 5];

// [month][row][col]
const PATTERN_1: [MonthGrid; 3] = [
    [
        [0, 1, 2, 1, 0],
        [2, 9, 6, 5, 2],
        [1, 5, 5, 3, 1],
        [2, 3, 4, 3, 2],
        [0, 1, 2, 1, 0],
    ],
    [
        [0, 2, 3, 2, 1],
        [1, 5, 5, 4, 3],
        [2, 5, 8, 3, 2],
        [1, 4, 4, 3, 3],
        [1, 2, 1, 2, 1],
    ],
    [
        [0, 2, 4, 3, 0],
        [2, 2, 6, 5, 4],
        [2, 5, 6, 9, 3],
        [2, 2, 6, 5, 4],
        [2, 2, 4, 3, 0],
    ],
];

const PATTERN_2: [MonthGrid; 3] = [
    [
        [1, 0, 1, 0, 1],
        [1, 9, 6, 4, 0],
        [0, 6, 3, 3, 3],
        [2, 2, 3, 2, 0],
        [0, 1, 2, 1, 2],
    ],
    [
        [1, 1, 3, 2, 0],
        [3, 6, 6, 5, 2],
        [3, 6, 9, 2, 2],
        [3, 5, 2, 1, 2],
        [0, 3, 4, 3, 0],
    ],
    [
        [1, 2, 3, 2, 1],
        [1, 2, 8, 7, 2],
        [1, 4, 8, 9, 5],
        [1, 2, 8, 7, 2],
        [0, 1, 2, 1, 3],
    ],
];

const STATIC_RING: MonthGrid = [
    [1, 1, 1, 1, 1],
    [1, 4, 5, 4, 1],
    [1, 5, 8, 5, 1],
    [1, 4, 5, 4, 1],
    [1, 1, 1, 1, 1],
];
const PATTERN_3: [MonthGrid; 3] = [STATIC_RING, STATIC_RING, STATIC_RING];

/// Toy pattern 1, 2 or 3 as a sequence (rows are latitude, columns longitude).
///
/// # Panics
/// For any other index.
pub fn pattern(index: usize) -> Sequence3D {
    let raw = match index {
        1 => &PATTERN_1,
        2 => &PATTERN_2,
        3 => &PATTERN_3,
        _ => panic!("toy pattern index must be 1, 2 or 3"),
    };
    let grids: Vec<Vec<Vec<f64>>> = raw
        .iter()
        .map(|g| g.iter().map(|row| row.iter().map(|&v| v as f64).collect()).collect())
        .collect();
    Sequence3D::from_month_grids(Origin { lat: 0, lon: 0, t: 0 }, &grids)
}

pub const EXPECTED_EMD_12: f64 = 0.2290;
pub const EXPECTED_EMD_13: f64 = 0.2984;
pub const EXPECTED_SP_12: f64 = 8.57;
pub const EXPECTED_SP_13: f64 = 5.13;
pub const EXPECTED_ED: f64 = 84.0;
pub const EMD_TOL: f64 = 1e-3;
pub const SP_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyReport {
    pub emd_12: f64,
    pub emd_13: f64,
    pub sp_12: f64,
    pub sp_13: f64,
    pub ed_12: f64,
    pub ed_13: f64,
}

/// Computes the six toy distances; `transport_cost` is the optimal transport
/// objective in raw lattice coordinates.
pub fn toy_report_with<F>(transport_cost: F) -> Result<ToyReport>
where
    F: Fn(&DensityCube, &DensityCube) -> Result<f64>,
{
    let (p1, p2, p3) = (pattern(1), pattern(2), pattern(3));
    let c1 = to_density_cube_with(&p1, CoordMode::Raw)?;
    let c2 = to_density_cube_with(&p2, CoordMode::Raw)?;
    let c3 = to_density_cube_with(&p3, CoordMode::Raw)?;
    Ok(ToyReport {
        emd_12: transport_cost(&c1, &c2)?,
        emd_13: transport_cost(&c1, &c3)?,
        sp_12: spatial_distance_baseline(&p1, &p2, &SPATIAL_WEIGHTS)?,
        sp_13: spatial_distance_baseline(&p1, &p3, &SPATIAL_WEIGHTS)?,
        ed_12: euclidean_baseline(&p1, &p2)?,
        ed_13: euclidean_baseline(&p1, &p3)?,
    })
}

pub fn toy_report() -> Result<ToyReport> {
    toy_report_with(|a, b| Ok(solve_ot(a, b)?.objective))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCheck {
    pub name: &'static str,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl ToyCheck {
    pub fn passed(&self) -> bool {
        (self.value - self.expected).abs() <= self.tolerance
    }
}

impl ToyReport {
    pub fn checks(&self) -> Vec<ToyCheck> {
        let check = |name, value, expected, tolerance| ToyCheck {
            name,
            value,
            expected,
            tolerance,
        };
        vec![
            check("emd_p1_p2", self.emd_12, EXPECTED_EMD_12, EMD_TOL),
            check("emd_p1_p3", self.emd_13, EXPECTED_EMD_13, EMD_TOL),
            check("sp_p1_p2", self.sp_12, EXPECTED_SP_12, SP_TOL),
            check("sp_p1_p3", self.sp_13, EXPECTED_SP_13, SP_TOL),
            check("ed_p1_p2", self.ed_12, EXPECTED_ED, 0.0),
            check("ed_p1_p3", self.ed_13, EXPECTED_ED, 0.0),
        ]
    }

    /// EMD ranks pattern 2 closer to pattern 1, the spatial-lag distance
    /// ranks pattern 3 closer, and the cell-wise distance cannot tell.
    pub fn ordering_holds(&self) -> bool {
        self.emd_12 < self.emd_13 && self.sp_12 > self.sp_13 && self.ed_12 == self.ed_13
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(ToyCheck::passed) && self.ordering_holds()
    }
}
