//! Rolling-window search of the history for sequences shaped like an input.
//!
//! Every candidate window size (the input size and its +-`dim_var_frac`
//! variants) gets its own stride lattice. A candidate is kept when its
//! rotation-minimized EMD to the input and its active-cell ratio are both
//! below threshold. Two exact filters run before any transport solve: the
//! active-cell ratio needs only a non-zero count (read from a prefix-sum
//! table), and the centroid distance bounds the EMD from below.

use log::warn;
use rayon::prelude::*;

use crate::cube::{to_density_cube_with, DensityCube, Dims, Origin, Sequence3D};
use crate::error::Result;
use crate::grid::{Bounds, FatalityField};
use crate::params::ModelParams;
use crate::transport::{active_ratio_counts, emd_lower_bound, emd_with_rotation, passes};

/// Dense copy of a field with a 3D prefix count of non-zero cells.
#[derive(Debug, Clone)]
pub struct HistoryIndex {
    bounds: Option<Bounds>,
    n_lat: usize,
    n_lon: usize,
    n_t: usize,
    values: Vec<f64>,
    nonzero_prefix: Vec<u32>,
}

impl HistoryIndex {
    pub fn new(field: &FatalityField) -> Self {
        let Some(b) = field.extent().bounds().copied() else {
            return Self {
                bounds: None,
                n_lat: 0,
                n_lon: 0,
                n_t: 0,
                values: Vec::new(),
                nonzero_prefix: vec![0],
            };
        };
        let (n_lat, n_lon, n_t) = (b.n_lat(), b.n_lon(), b.n_months());
        let mut values = vec![0.0; n_lat * n_lon * n_t];
        for (k, v) in field.iter() {
            let la = (k.lat - b.lat_min) as usize;
            let lo = (k.lon - b.lon_min) as usize;
            let t = (k.month - b.month_min) as usize;
            values[(la * n_lon + lo) * n_t + t] = v as f64;
        }
        let (pl, po, pt) = (n_lat + 1, n_lon + 1, n_t + 1);
        let mut prefix = vec![0u32; pl * po * pt];
        let p = |a: usize, b: usize, c: usize| (a * po + b) * pt + c;
        for la in 1..pl {
            for lo in 1..po {
                for t in 1..pt {
                    let here = u32::from(values[((la - 1) * n_lon + lo - 1) * n_t + t - 1] != 0.0);
                    prefix[p(la, lo, t)] =
                        here + prefix[p(la - 1, lo, t)] + prefix[p(la, lo - 1, t)] + prefix[p(la, lo, t - 1)]
                            - prefix[p(la - 1, lo - 1, t)]
                            - prefix[p(la - 1, lo, t - 1)]
                            - prefix[p(la, lo - 1, t - 1)]
                            + prefix[p(la - 1, lo - 1, t - 1)];
                }
            }
        }
        Self {
            bounds: Some(b),
            n_lat,
            n_lon,
            n_t,
            values,
            nonzero_prefix: prefix,
        }
    }

    pub fn bounds(&self) -> Option<&Bounds> {
        self.bounds.as_ref()
    }

    /// Non-zero cells in the box at local offsets `(la, lo, t)` of size `dims`.
    fn nonzero_in(&self, la: usize, lo: usize, t: usize, dims: Dims) -> usize {
        let (po, pt) = (self.n_lon + 1, self.n_t + 1);
        let p = |a: usize, b: usize, c: usize| self.nonzero_prefix[(a * po + b) * pt + c] as i64;
        let (a0, b0, c0) = (la, lo, t);
        let (a1, b1, c1) = (la + dims.lat, lo + dims.lon, t + dims.time);
        let n = p(a1, b1, c1) - p(a0, b1, c1) - p(a1, b0, c1) - p(a1, b1, c0)
            + p(a0, b0, c1)
            + p(a0, b1, c0)
            + p(a1, b0, c0)
            - p(a0, b0, c0);
        n as usize
    }

    /// Box at absolute `origin`; cells outside the indexed extent read as zero.
    pub fn extract(&self, origin: Origin, dims: Dims) -> Sequence3D {
        let Some(b) = self.bounds else {
            return Sequence3D::zeros(origin, dims);
        };
        Sequence3D::from_fn(origin, dims, |la, lo, t| {
            let r = origin.lat + la as i64 - b.lat_min;
            let c = origin.lon + lo as i64 - b.lon_min;
            let m = origin.t + t as i64 - b.month_min;
            if r < 0 || c < 0 || m < 0 || r as usize >= self.n_lat || c as usize >= self.n_lon || m as usize >= self.n_t
            {
                0.0
            } else {
                self.values[(r as usize * self.n_lon + c as usize) * self.n_t + m as usize]
            }
        })
    }
}

fn round_half_up(x: f64) -> usize {
    // The epsilon keeps exact halves like 1.5 from landing just below.
    (x + 0.5 + 1e-9).floor().max(1.0) as usize
}

fn axis_variants(d: usize, frac: f64) -> Vec<usize> {
    let mut v = vec![
        round_half_up(d as f64 * (1.0 - frac)),
        d.max(1),
        round_half_up(d as f64 * (1.0 + frac)),
    ];
    v.sort_unstable();
    v.dedup();
    v
}

/// Candidate window sizes: per axis `{d(1-f), d, d(1+f)}` rounded half up
/// and clamped to at least 1, combined as a sorted Cartesian product.
pub fn window_dims(input: Dims, dim_var_frac: f64) -> Vec<Dims> {
    let lats = axis_variants(input.lat, dim_var_frac);
    let lons = axis_variants(input.lon, dim_var_frac);
    let times = axis_variants(input.time, dim_var_frac);
    let mut out = Vec::with_capacity(lats.len() * lons.len() * times.len());
    for &la in &lats {
        for &lo in &lons {
            for &t in &times {
                out.push(Dims::new(la, lo, t));
            }
        }
    }
    out
}

/// `max(1, floor(dim * frac))`.
pub fn stride(dim: usize, frac: f64) -> usize {
    ((dim as f64 * frac + 1e-9).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub origin: Origin,
    pub dims: Dims,
    /// Quarter-turns applied to the matched window to align it with the input.
    pub rotation: u8,
    pub emd: f64,
    pub r: f64,
    /// True when the match only passes under relaxed thresholds.
    pub relaxed: bool,
    pub past_future: Sequence3D,
}

impl MatchResult {
    pub fn sort_key(&self) -> (i64, i64, i64, Dims, u8) {
        (
            self.origin.t,
            self.origin.lat,
            self.origin.lon,
            self.dims,
            self.rotation,
        )
    }
}

/// The sequence being searched for.
#[derive(Debug, Clone)]
pub struct SearchInput {
    pub cube: DensityCube,
    pub dims: Dims,
    /// The input's own window, never reported as a match.
    pub exclude: Option<Origin>,
}

impl SearchInput {
    pub fn from_sequence(seq: &Sequence3D, params: &ModelParams) -> Result<Self> {
        Ok(Self {
            cube: to_density_cube_with(seq, params.coords)?,
            dims: seq.dims,
            exclude: Some(seq.origin),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchOutcome {
    pub matches: Vec<MatchResult>,
    pub warnings: Vec<String>,
    /// Relaxation rounds used; 0 when the plain thresholds sufficed.
    pub relax_steps: usize,
    /// No match at all: the caller should emit a zero forecast.
    pub fallback: bool,
}

struct Candidate {
    origin: Origin,
    dims: Dims,
    local: (usize, usize, usize),
}

fn candidates(index: &HistoryIndex, input: &SearchInput, train_end: i64, params: &ModelParams) -> Vec<Candidate> {
    let Some(b) = index.bounds else {
        return Vec::new();
    };
    let horizon = params.horizon as i64;
    let mut out = Vec::new();
    for dims in window_dims(input.dims, params.dim_var_frac) {
        let (s_lat, s_lon, s_t) = (
            stride(dims.lat, params.stride_frac),
            stride(dims.lon, params.stride_frac),
            stride(dims.time, params.stride_frac),
        );
        // Window plus past future must end by train_end.
        let last_t0 = (train_end - dims.time as i64 - horizon + 1).min(b.month_max - dims.time as i64 + 1);
        let mut t0 = b.month_min;
        while t0 <= last_t0 {
            let mut lat0 = b.lat_min;
            while lat0 + dims.lat as i64 - 1 <= b.lat_max {
                let mut lon0 = b.lon_min;
                while lon0 + dims.lon as i64 - 1 <= b.lon_max {
                    let origin = Origin {
                        lat: lat0,
                        lon: lon0,
                        t: t0,
                    };
                    let is_self = input.exclude == Some(origin) && dims == input.dims;
                    if !is_self {
                        out.push(Candidate {
                            origin,
                            dims,
                            local: (
                                (lat0 - b.lat_min) as usize,
                                (lon0 - b.lon_min) as usize,
                                (t0 - b.month_min) as usize,
                            ),
                        });
                    }
                    lon0 += s_lon as i64;
                }
                lat0 += s_lat as i64;
            }
            t0 += s_t as i64;
        }
    }
    out
}

fn evaluate(
    index: &HistoryIndex,
    input: &SearchInput,
    cand: &Candidate,
    params: &ModelParams,
    thr1: f64,
    thr2: f64,
) -> Result<Option<MatchResult>> {
    let (la, lo, t) = cand.local;
    let n = index.nonzero_in(la, lo, t, cand.dims);
    if n == 0 {
        return Ok(None);
    }
    let r = active_ratio_counts(n, input.cube.n_active)?;
    if r >= thr2 {
        return Ok(None);
    }
    let window = index.extract(cand.origin, cand.dims);
    let cube = to_density_cube_with(&window, params.coords)?;
    if emd_lower_bound(&cube, &input.cube) >= thr1 {
        return Ok(None);
    }
    let (emd, rotation) = emd_with_rotation(&cube, &input.cube)?;
    if !passes(emd, r, thr1, thr2) {
        return Ok(None);
    }
    let pf_origin = Origin {
        t: cand.origin.t + cand.dims.time as i64,
        ..cand.origin
    };
    let past_future = index.extract(pf_origin, Dims::new(cand.dims.lat, cand.dims.lon, params.horizon));
    Ok(Some(MatchResult {
        origin: cand.origin,
        dims: cand.dims,
        rotation,
        emd,
        r,
        relaxed: !passes(emd, r, params.thr1, params.thr2),
        past_future,
    }))
}

fn search_with(
    index: &HistoryIndex,
    input: &SearchInput,
    train_end: i64,
    params: &ModelParams,
    thr1: f64,
    thr2: f64,
) -> Result<Vec<MatchResult>> {
    let cands = candidates(index, input, train_end, params);
    let found: Vec<Option<MatchResult>> = cands
        .par_iter()
        .map(|c| evaluate(index, input, c, params, thr1, thr2))
        .collect::<Result<_>>()?;
    let mut matches: Vec<MatchResult> = found.into_iter().flatten().collect();
    matches.sort_by_key(MatchResult::sort_key);
    Ok(matches)
}

/// One pass at the configured thresholds.
pub fn rolling_search(
    history: &HistoryIndex,
    input: &SearchInput,
    train_end: i64,
    params: &ModelParams,
) -> Result<SearchOutcome> {
    let mut outcome = SearchOutcome::default();
    if candidates(history, input, train_end, params).is_empty() {
        let msg = format!(
            "no candidate windows end by month {train_end} with a {}-month past future",
            params.horizon
        );
        warn!("{msg}");
        outcome.warnings.push(msg);
    }
    outcome.matches = search_with(history, input, train_end, params, params.thr1, params.thr2)?;
    outcome.fallback = outcome.matches.is_empty();
    Ok(outcome)
}

/// Rolling search that, when enabled and too few matches are found, retries
/// with both thresholds multiplied by `relax_factor` per step.
pub fn relax_search(
    history: &HistoryIndex,
    input: &SearchInput,
    train_end: i64,
    params: &ModelParams,
) -> Result<SearchOutcome> {
    let mut outcome = rolling_search(history, input, train_end, params)?;
    if params.relax && outcome.matches.len() < params.min_matches {
        for step in 1..=params.max_relax_steps {
            let factor = params.relax_factor.powi(step as i32);
            let matches = search_with(
                history,
                input,
                train_end,
                params,
                params.thr1 * factor,
                params.thr2 * factor,
            )?;
            outcome.relax_steps = step;
            outcome.matches = matches;
            if outcome.matches.len() >= params.min_matches {
                break;
            }
        }
    }
    outcome.fallback = outcome.matches.is_empty();
    Ok(outcome)
}
