//! Active-zone detection on an aggregated grid.
//!
//! Cells with at least one fatality in the aggregation window are active.
//! Active cells are chained into zones when they lie within a Chebyshev
//! radius of each other, single-cell zones are eroded away, and zones that
//! share cells (or sit entirely inside another zone's box) are unioned.

use std::collections::{BTreeSet, HashMap};

use log::warn;
use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{aggregate, AggregatedGrid, FatalityField};
use crate::params::ModelParams;
use crate::union_find::UnionFind;

/// Absolute `(lat, lon)` grid coordinates.
pub type Cell = (i64, i64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveCellMask {
    pub lat_min: i64,
    pub lon_min: i64,
    pub n_lat: usize,
    pub n_lon: usize,
    pub source_window: (i64, i64),
    active: Vec<bool>,
}

impl ActiveCellMask {
    /// Mask of the given dimensions with exactly `cells` active.
    pub fn from_cells(
        lat_min: i64,
        lon_min: i64,
        n_lat: usize,
        n_lon: usize,
        cells: impl IntoIterator<Item = Cell>,
    ) -> Self {
        let mut active = vec![false; n_lat * n_lon];
        for (lat, lon) in cells {
            let r = (lat - lat_min) as usize;
            let c = (lon - lon_min) as usize;
            assert!(r < n_lat && c < n_lon, "cell ({lat}, {lon}) outside mask");
            active[r * n_lon + c] = true;
        }
        Self {
            lat_min,
            lon_min,
            n_lat,
            n_lon,
            source_window: (0, 0),
            active,
        }
    }

    pub fn is_active(&self, lat: i64, lon: i64) -> bool {
        let r = lat - self.lat_min;
        let c = lon - self.lon_min;
        r >= 0
            && c >= 0
            && (r as usize) < self.n_lat
            && (c as usize) < self.n_lon
            && self.active[r as usize * self.n_lon + c as usize]
    }

    /// Active cells in row-major order.
    pub fn active_cells(&self) -> Vec<Cell> {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(i, _)| {
                (
                    self.lat_min + (i / self.n_lon) as i64,
                    self.lon_min + (i % self.n_lon) as i64,
                )
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Inclusive bounding box in `(lat, lon)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub lat_min: i64,
    pub lat_max: i64,
    pub lon_min: i64,
    pub lon_max: i64,
}

impl BBox {
    pub fn n_lat(&self) -> usize {
        (self.lat_max - self.lat_min + 1) as usize
    }

    pub fn n_lon(&self) -> usize {
        (self.lon_max - self.lon_min + 1) as usize
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.lat_min <= other.lat_min
            && other.lat_max <= self.lat_max
            && self.lon_min <= other.lon_min
            && other.lon_max <= self.lon_max
    }

    pub fn contains(&self, (lat, lon): Cell) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveZone {
    pub zone_id: usize,
    pub cells: BTreeSet<Cell>,
    pub bbox: BBox,
}

impl ActiveZone {
    /// # Panics
    /// If `cells` is empty.
    pub fn new(zone_id: usize, cells: BTreeSet<Cell>) -> Self {
        let bbox = tight_bbox(&cells).expect("zone needs at least one cell");
        Self { zone_id, cells, bbox }
    }

    /// Zone with the given cells but an explicitly wider box.
    pub fn with_bbox(zone_id: usize, cells: BTreeSet<Cell>, bbox: BBox) -> Self {
        debug_assert!(cells.iter().all(|&c| bbox.contains(c)));
        Self { zone_id, cells, bbox }
    }

    fn min_cell(&self) -> Cell {
        *self.cells.iter().next().expect("non-empty zone")
    }
}

fn tight_bbox(cells: &BTreeSet<Cell>) -> Option<BBox> {
    let mut it = cells.iter();
    let &(lat, lon) = it.next()?;
    let mut b = BBox {
        lat_min: lat,
        lat_max: lat,
        lon_min: lon,
        lon_max: lon,
    };
    for &(lat, lon) in it {
        b.lat_min = b.lat_min.min(lat);
        b.lat_max = b.lat_max.max(lat);
        b.lon_min = b.lon_min.min(lon);
        b.lon_max = b.lon_max.max(lon);
    }
    Some(b)
}

pub fn active_mask(grid: &AggregatedGrid) -> ActiveCellMask {
    ActiveCellMask {
        lat_min: grid.lat_min,
        lon_min: grid.lon_min,
        n_lat: grid.n_lat,
        n_lon: grid.n_lon,
        source_window: grid.window,
        active: grid.iter().map(|(_, _, v)| v >= 1).collect(),
    }
}

/// Connected components of active cells where neighbours are within
/// Chebyshev distance `radius`. Zone ids follow the row-major order of each
/// zone's first cell.
pub fn label_zones(mask: &ActiveCellMask, radius: usize) -> Vec<ActiveZone> {
    let cells = mask.active_cells();
    if cells.is_empty() {
        return Vec::new();
    }
    let index: HashMap<Cell, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let r = radius as i64;
    let mut uf = UnionFind::new(cells.len());
    for (i, &(lat, lon)) in cells.iter().enumerate() {
        // Forward half of the neighbourhood; the backward half is covered by
        // earlier cells.
        for dlat in 0..=r {
            let lon_from = if dlat == 0 { 1 } else { -r };
            for dlon in lon_from..=r {
                if let Some(&j) = index.get(&(lat + dlat, lon + dlon)) {
                    uf.union(i, j);
                }
            }
        }
    }
    uf.groups()
        .into_iter()
        .enumerate()
        .map(|(zone_id, members)| ActiveZone::new(zone_id, members.into_iter().map(|m| cells[m]).collect()))
        .collect()
}

/// Zones with at least two cells, renumbered, plus the dropped singleton cells.
pub fn erode_with_report(zones: &[ActiveZone]) -> (Vec<ActiveZone>, Vec<Cell>) {
    let mut kept = Vec::new();
    let mut singletons = Vec::new();
    for zone in zones {
        if zone.cells.len() >= 2 {
            kept.push(zone.clone());
        } else {
            singletons.extend(zone.cells.iter().copied());
        }
    }
    kept.sort_by_key(ActiveZone::min_cell);
    for (id, zone) in kept.iter_mut().enumerate() {
        zone.zone_id = id;
    }
    singletons.sort();
    (kept, singletons)
}

pub fn erode(zones: &[ActiveZone]) -> Vec<ActiveZone> {
    erode_with_report(zones).0
}

fn union_groups(zones: &[&ActiveZone], groups: Vec<Vec<usize>>) -> Vec<(ActiveZone, bool)> {
    let mut merged: Vec<(ActiveZone, bool)> = groups
        .into_iter()
        .map(|members| {
            let cells: BTreeSet<Cell> = members.iter().flat_map(|&m| zones[m].cells.iter().copied()).collect();
            let mut bbox = tight_bbox(&cells).expect("non-empty");
            for &m in &members {
                let b = zones[m].bbox;
                bbox.lat_min = bbox.lat_min.min(b.lat_min);
                bbox.lat_max = bbox.lat_max.max(b.lat_max);
                bbox.lon_min = bbox.lon_min.min(b.lon_min);
                bbox.lon_max = bbox.lon_max.max(b.lon_max);
            }
            (ActiveZone::with_bbox(0, cells, bbox), members.len() > 1)
        })
        .collect();
    merged.sort_by_key(|(z, _)| z.min_cell());
    for (id, (zone, _)) in merged.iter_mut().enumerate() {
        zone.zone_id = id;
    }
    merged
}

/// Unions zones from both lists that share at least one cell. Each output
/// zone is flagged when it was formed from more than one input zone.
pub fn dilate_union(zones_a: &[ActiveZone], zones_b: &[ActiveZone]) -> Vec<(ActiveZone, bool)> {
    let all: Vec<&ActiveZone> = zones_a.iter().chain(zones_b).collect();
    let mut uf = UnionFind::new(all.len());
    let mut owner: HashMap<Cell, usize> = HashMap::new();
    for (i, zone) in all.iter().enumerate() {
        for &cell in &zone.cells {
            if let Some(&j) = owner.get(&cell) {
                uf.union(i, j);
            } else {
                owner.insert(cell, i);
            }
        }
    }
    union_groups(&all, uf.groups())
}

/// Unions zones whose bounding box lies entirely within another zone's box.
/// Zones whose boxes only partly overlap are kept apart; their forecasts are
/// averaged on the shared cells downstream.
pub fn merge_nested(zones: &[ActiveZone]) -> Vec<(ActiveZone, bool)> {
    let all: Vec<&ActiveZone> = zones.iter().collect();
    let mut uf = UnionFind::new(all.len());
    for i in 0..all.len() {
        for j in 0..all.len() {
            if i != j && all[i].bbox.contains_box(&all[j].bbox) {
                uf.union(i, j);
            }
        }
    }
    union_groups(&all, uf.groups())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneDetection {
    /// Final zones after erosion and nested-box union, with merge flags.
    pub zones: Vec<(ActiveZone, bool)>,
    pub singletons: Vec<Cell>,
    pub grid: AggregatedGrid,
}

/// Full detection over the `input_window` months ending at `train_end`.
pub fn detect_zones(field: &FatalityField, train_end: i64, params: &ModelParams) -> Result<ZoneDetection> {
    let t_start = train_end - params.input_window as i64 + 1;
    let grid = aggregate(field, t_start, train_end)?;
    let mask = active_mask(&grid);
    let labeled = label_zones(&mask, params.radius);
    let (eroded, singletons) = erode_with_report(&labeled);
    let zones = merge_nested(&eroded);
    Ok(ZoneDetection {
        zones,
        singletons,
        grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageRow {
    pub train_end: i64,
    pub pct_fatalities: f64,
    pub pct_active_cells: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageWarning {
    pub train_end: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub warnings: Vec<CoverageWarning>,
}

/// For each training end month, builds zones from the trailing input window
/// and reports the share of the next `horizon` months' fatalities and active
/// cells that fall on zone cells.
pub fn coverage_stats(
    field: &FatalityField,
    params: &ModelParams,
    first_train_end: i64,
    last_train_end: i64,
) -> Result<CoverageReport> {
    params.validate()?;
    let ends: Vec<i64> = (first_train_end..=last_train_end).collect();
    let bounds = field.extent().bounds().copied();
    let outcomes: Vec<Result<std::result::Result<CoverageRow, CoverageWarning>>> = ends
        .par_iter()
        .map(|&te| {
            let warn_row = |reason: String| Ok(Err(CoverageWarning { train_end: te, reason }));
            let Some(b) = bounds else {
                return warn_row("empty field".into());
            };
            let train_start = te - params.input_window as i64 + 1;
            let test_end = te + params.horizon as i64;
            if train_start < b.month_min || test_end > b.month_max {
                return warn_row(format!(
                    "needs months {train_start}..={test_end}, field covers {}..={}",
                    b.month_min, b.month_max
                ));
            }
            let detection = detect_zones(field, te, params)?;
            let zone_cells: BTreeSet<Cell> = detection
                .zones
                .iter()
                .flat_map(|(z, _)| z.cells.iter().copied())
                .collect();
            let test = aggregate(field, te + 1, test_end)?;
            let (mut fat_total, mut fat_in) = (0u64, 0u64);
            let (mut act_total, mut act_in) = (0usize, 0usize);
            for (lat, lon, v) in test.iter() {
                if v == 0 {
                    continue;
                }
                let inside = zone_cells.contains(&(lat, lon));
                fat_total += v;
                act_total += 1;
                if inside {
                    fat_in += v;
                    act_in += 1;
                }
            }
            if fat_total == 0 {
                return warn_row("no fatalities in test window".into());
            }
            Ok(Ok(CoverageRow {
                train_end: te,
                pct_fatalities: fat_in as f64 / fat_total as f64,
                pct_active_cells: act_in as f64 / act_total as f64,
            }))
        })
        .collect();
    let mut report = CoverageReport::default();
    for outcome in outcomes {
        match outcome? {
            Ok(row) => report.rows.push(row),
            Err(w) => {
                warn!("coverage: skipping train end {}: {}", w.train_end, w.reason);
                report.warnings.push(w);
            }
        }
    }
    Ok(report)
}
