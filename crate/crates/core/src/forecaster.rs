//! Turns matched past futures into a zone forecast.
//!
//! Each past future is turned back into the input's orientation, resized to
//! the zone box, and summarized by its three normalized marginals. Matches
//! whose marginals lie within the cluster distance are chained into
//! scenarios; the largest scenario's mean is the forecast.

use std::collections::BTreeMap;

use crate::cube::{Dims, Origin, Sequence3D};
use crate::error::{Error, Result};
use crate::grid::{ForecastRecord, TableRow};
use crate::matcher::MatchResult;
use crate::params::ModelParams;
use crate::union_find::UnionFind;
use crate::zones::ActiveZone;

fn target_index(i: usize, source: usize, target: usize) -> usize {
    (((2 * i + 1) * target) / (2 * source)).min(target - 1)
}

/// Resizes by sending source cell `i` to `floor((i + 0.5) * target / source)`
/// on every axis; colliding values are summed so the total is unchanged.
pub fn rescale_past_future(pf: &Sequence3D, target: Dims) -> Sequence3D {
    let mut out = Sequence3D::zeros(pf.origin, target);
    let s = pf.dims;
    for (la, lo, t, v) in pf.iter() {
        if v != 0.0 {
            out.add(
                target_index(la, s.lat, target.lat),
                target_index(lo, s.lon, target.lon),
                target_index(t, s.time, target.time),
                v,
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Longitude marginal, then latitude, then time.
    pub values: Vec<f64>,
    /// Set when the sequence had no mass and the vector is all zero.
    pub degenerate: bool,
}

/// Marginal sums of the mass-normalized sequence.
pub fn project_axes(seq: &Sequence3D) -> Projection {
    let d = seq.dims;
    let mut values = vec![0.0; d.lon + d.lat + d.time];
    let total = seq.total();
    if total <= 0.0 {
        return Projection {
            values,
            degenerate: true,
        };
    }
    for (la, lo, t, v) in seq.iter() {
        let w = v / total;
        values[lo] += w;
        values[d.lon + la] += w;
        values[d.lon + d.lat + t] += w;
    }
    Projection {
        values,
        degenerate: false,
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Indices into the match list passed to [`cluster_matches`].
    pub members: Vec<usize>,
    pub mean_values: Sequence3D,
    pub probability: f64,
    /// Mean EMD of the members to the input.
    pub mean_emd: f64,
}

/// Past future in the input's orientation and size.
pub fn reshape_match(m: &MatchResult, target: Dims) -> Sequence3D {
    rescale_past_future(&m.past_future.rotated(m.rotation), target)
}

/// Single-linkage clusters of the reshaped past futures, ordered by their
/// first member in canonical match order.
pub fn cluster_matches(matches: &[MatchResult], target: Dims, params: &ModelParams) -> Result<Vec<Scenario>> {
    if matches.is_empty() {
        return Err(Error::NoMatches);
    }
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&a, &b| {
        matches[a]
            .sort_key()
            .cmp(&matches[b].sort_key())
            .then(matches[a].emd.total_cmp(&matches[b].emd))
    });
    let reshaped: Vec<Sequence3D> = order.iter().map(|&i| reshape_match(&matches[i], target)).collect();
    let projections: Vec<Projection> = reshaped.iter().map(project_axes).collect();
    let cut = params.cluster_distance(target.volume());
    let n = order.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if euclidean(&projections[i].values, &projections[j].values) < cut {
                uf.union(i, j);
            }
        }
    }
    let total = n as f64;
    Ok(uf
        .groups()
        .into_iter()
        .map(|group| {
            let mut mean = Sequence3D::zeros(Origin { lat: 0, lon: 0, t: 0 }, target);
            for &g in &group {
                for (la, lo, t, v) in reshaped[g].iter() {
                    mean.add(la, lo, t, v);
                }
            }
            let k = group.len() as f64;
            let mean_values = Sequence3D::from_fn(mean.origin, target, |la, lo, t| mean.get(la, lo, t) / k);
            Scenario {
                mean_emd: group.iter().map(|&g| matches[order[g]].emd).sum::<f64>() / k,
                members: group.iter().map(|&g| order[g]).collect(),
                mean_values,
                probability: k / total,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub zone_id: usize,
    /// Predictions over the zone box and forecast months.
    pub values: Sequence3D,
    pub chosen_probability: f64,
    /// Index of the chosen scenario; `None` for a zero fallback.
    pub chosen_scenario: Option<usize>,
}

impl Forecast {
    pub fn records(&self) -> Vec<ForecastRecord> {
        let o = self.values.origin;
        self.values
            .iter()
            .map(|(la, lo, t, v)| ForecastRecord {
                zone_id: self.zone_id,
                lon: o.lon + lo as i64,
                lat: o.lat + la as i64,
                month: o.t + t as i64,
                pred: v,
            })
            .collect()
    }
}

fn zone_origin(zone: &ActiveZone, t_start: i64) -> Origin {
    Origin {
        lat: zone.bbox.lat_min,
        lon: zone.bbox.lon_min,
        t: t_start,
    }
}

/// Places the most populated scenario's mean on the zone box. Ties go to the
/// lower mean member EMD, then the lower scenario index.
pub fn make_forecast(zone: &ActiveZone, scenarios: &[Scenario], t_start: i64) -> Result<Forecast> {
    let (idx, best) = scenarios
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.members
                .len()
                .cmp(&a.members.len())
                .then(a.mean_emd.total_cmp(&b.mean_emd))
                .then(ia.cmp(ib))
        })
        .ok_or(Error::NoMatches)?;
    let d = best.mean_values.dims;
    if d.lat != zone.bbox.n_lat() || d.lon != zone.bbox.n_lon() {
        return Err(Error::ShapeMismatch {
            left: (d.lat, d.lon, d.time),
            right: (zone.bbox.n_lat(), zone.bbox.n_lon(), d.time),
        });
    }
    let origin = zone_origin(zone, t_start);
    Ok(Forecast {
        zone_id: zone.zone_id,
        values: Sequence3D::from_fn(origin, d, |la, lo, t| best.mean_values.get(la, lo, t)),
        chosen_probability: best.probability,
        chosen_scenario: Some(idx),
    })
}

/// All-zero forecast used when no match was found.
pub fn fallback_forecast(zone: &ActiveZone, t_start: i64, horizon: usize) -> Forecast {
    Forecast {
        zone_id: zone.zone_id,
        values: Sequence3D::zeros(
            zone_origin(zone, t_start),
            Dims::new(zone.bbox.n_lat(), zone.bbox.n_lon(), horizon),
        ),
        chosen_probability: 0.0,
        chosen_scenario: None,
    }
}

/// Replaces every cell-month predicted by several zones with the mean of
/// those predictions. Output is ordered by zone id.
pub fn merge_zone_forecasts(forecasts: &[Forecast]) -> Vec<Forecast> {
    let mut sorted: Vec<Forecast> = forecasts.to_vec();
    sorted.sort_by_key(|f| f.zone_id);
    let mut acc: BTreeMap<(i64, i64, i64), (f64, usize)> = BTreeMap::new();
    for f in &sorted {
        for r in f.records() {
            let e = acc.entry((r.lat, r.lon, r.month)).or_insert((0.0, 0));
            e.0 += r.pred;
            e.1 += 1;
        }
    }
    for f in &mut sorted {
        let o = f.values.origin;
        let d = f.values.dims;
        f.values = Sequence3D::from_fn(o, d, |la, lo, t| {
            let (sum, n) = acc[&(o.lat + la as i64, o.lon + lo as i64, o.t + t as i64)];
            sum / n as f64
        });
    }
    sorted
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioRecord {
    pub zone_id: usize,
    pub scenario_idx: usize,
    pub probability: f64,
    pub n_members: usize,
}

impl TableRow for ScenarioRecord {
    type Key = (usize, usize);

    fn header() -> &'static [&'static str] {
        &["zone_id", "scenario_idx", "probability", "n_members"]
    }

    fn key(&self) -> Self::Key {
        (self.zone_id, self.scenario_idx)
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.zone_id.to_string(),
            self.scenario_idx.to_string(),
            format!("{}", self.probability),
            self.n_members.to_string(),
        ]
    }
}

pub fn scenario_records(zone_id: usize, scenarios: &[Scenario]) -> Vec<ScenarioRecord> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| ScenarioRecord {
            zone_id,
            scenario_idx: i,
            probability: s.probability,
            n_members: s.members.len(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn o() -> Origin {
        Origin { lat: 0, lon: 0, t: 0 }
    }

    fn match_with(origin: Origin, emd: f64, pf: Sequence3D) -> MatchResult {
        MatchResult {
            origin,
            dims: Dims::new(pf.dims.lat, pf.dims.lon, 3),
            rotation: 0,
            emd,
            r: 0.0,
            relaxed: false,
            past_future: pf,
        }
    }

    fn zone(id: usize, cells: &[(i64, i64)]) -> ActiveZone {
        ActiveZone::new(id, cells.iter().copied().collect::<BTreeSet<_>>())
    }

    #[test]
    fn rescale_identity() {
        let s = Sequence3D::from_fn(o(), Dims::new(2, 3, 4), |a, b, c| (a * 12 + b * 4 + c) as f64);
        assert_eq!(rescale_past_future(&s, s.dims), s);
    }

    #[test]
    fn rescale_shrinks_with_sum() {
        let s = Sequence3D::from_fn(o(), Dims::new(2, 2, 2), |_, _, _| 1.0);
        let r = rescale_past_future(&s, Dims::new(1, 1, 1));
        assert_eq!(r.get(0, 0, 0), 8.0);
    }

    #[test]
    fn rescale_grows_into_one_cell() {
        let mut s = Sequence3D::zeros(o(), Dims::new(1, 1, 1));
        s.set(0, 0, 0, 6.0);
        let r = rescale_past_future(&s, Dims::new(2, 1, 1));
        assert_eq!(r.total(), 6.0);
        assert_eq!(r.get(1, 0, 0), 6.0);
    }

    #[test]
    fn projection_examples() {
        let mut s = Sequence3D::zeros(o(), Dims::new(2, 2, 2));
        s.set(0, 0, 0, 3.0);
        assert_eq!(project_axes(&s).values, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let u = Sequence3D::from_fn(o(), Dims::new(2, 2, 2), |_, _, _| 1.0);
        assert_eq!(project_axes(&u).values, vec![0.5; 6]);
        let z = project_axes(&Sequence3D::zeros(o(), Dims::new(2, 2, 2)));
        assert!(z.degenerate && z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_match_single_scenario() {
        let pf = Sequence3D::from_fn(o(), Dims::new(1, 1, 6), |_, _, t| t as f64);
        let sc = cluster_matches(&[match_with(o(), 0.0, pf.clone())], pf.dims, &ModelParams::default()).unwrap();
        assert_eq!(sc.len(), 1);
        assert_eq!(sc[0].probability, 1.0);
        assert_eq!(sc[0].mean_values.values(), pf.values());
    }

    #[test]
    fn two_near_one_far() {
        let d = Dims::new(1, 2, 2);
        let near = Sequence3D::from_fn(o(), d, |_, lo, t| if lo == 0 && t == 0 { 1.0 } else { 0.0 });
        let far = Sequence3D::from_fn(o(), d, |_, lo, t| if lo == 1 && t == 1 { 1.0 } else { 0.0 });
        let params = ModelParams {
            clu_coef: 0.1,
            ..ModelParams::default()
        };
        let ms = vec![
            match_with(Origin { lat: 0, lon: 0, t: 5 }, 0.05, near.clone()),
            match_with(Origin { lat: 0, lon: 0, t: 1 }, 0.02, far.clone()),
            match_with(Origin { lat: 0, lon: 0, t: 9 }, 0.07, near),
        ];
        let sc = cluster_matches(&ms, d, &params).unwrap();
        let mut probs: Vec<f64> = sc.iter().map(|s| s.probability).collect();
        probs.sort_by(f64::total_cmp);
        assert!((probs[0] - 1.0 / 3.0).abs() < 1e-12 && (probs[1] - 2.0 / 3.0).abs() < 1e-12);
        let z = zone(4, &[(10, 20), (10, 21)]);
        let f = make_forecast(&z, &sc, 100).unwrap();
        assert!((f.chosen_probability - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.values.get(0, 0, 0), 1.0);
        assert_eq!(
            f.values.origin,
            Origin {
                lat: 10,
                lon: 20,
                t: 100
            }
        );
    }

    #[test]
    fn tie_broken_by_mean_emd() {
        let d = Dims::new(1, 2, 2);
        let a = Sequence3D::from_fn(o(), d, |_, lo, t| if lo == 0 && t == 0 { 1.0 } else { 0.0 });
        let b = Sequence3D::from_fn(o(), d, |_, lo, t| if lo == 1 && t == 1 { 1.0 } else { 0.0 });
        let ms = vec![
            match_with(Origin { lat: 0, lon: 0, t: 1 }, 0.12, a),
            match_with(Origin { lat: 0, lon: 0, t: 2 }, 0.10, b),
        ];
        let sc = cluster_matches(&ms, d, &ModelParams::default()).unwrap();
        assert_eq!(sc.len(), 2);
        let f = make_forecast(&zone(0, &[(0, 0), (0, 1)]), &sc, 0).unwrap();
        assert_eq!(f.values.get(0, 1, 1), 1.0);
        assert_eq!(f.chosen_probability, 0.5);
    }

    #[test]
    fn identical_matches_average_to_themselves() {
        let d = Dims::new(2, 1, 3);
        let pf = Sequence3D::from_fn(o(), d, |la, _, t| (la + t) as f64);
        let ms: Vec<MatchResult> = (0..4)
            .map(|i| match_with(Origin { lat: 0, lon: 0, t: i }, 0.0, pf.clone()))
            .collect();
        let sc = cluster_matches(&ms, d, &ModelParams::default()).unwrap();
        assert_eq!(sc.len(), 1);
        assert_eq!(sc[0].mean_values.values(), pf.values());
    }

    #[test]
    fn clustering_is_permutation_invariant() {
        let d = Dims::new(1, 3, 2);
        let ms: Vec<MatchResult> = (0..6)
            .map(|i| {
                let pf = Sequence3D::from_fn(o(), d, |_, lo, t| ((lo * 3 + t + i as usize) % 4) as f64 + 0.5);
                match_with(Origin { lat: 0, lon: i, t: 0 }, 0.01 * i as f64, pf)
            })
            .collect();
        let params = ModelParams {
            clu_coef: 0.02,
            ..ModelParams::default()
        };
        let base = cluster_matches(&ms, d, &params).unwrap();
        let mut rev = ms.clone();
        rev.reverse();
        let other = cluster_matches(&rev, d, &params).unwrap();
        assert_eq!(base.len(), other.len());
        for (a, b) in base.iter().zip(&other) {
            assert_eq!(a.mean_values, b.mean_values);
            let mapped: Vec<usize> = b.members.iter().map(|&i| ms.len() - 1 - i).collect();
            assert_eq!(a.members, mapped);
        }
    }

    #[test]
    fn empty_matches_error() {
        assert!(matches!(
            cluster_matches(&[], Dims::new(1, 1, 1), &ModelParams::default()),
            Err(Error::NoMatches)
        ));
    }

    #[test]
    fn derotation_restores_input_orientation() {
        // A 1x2 past future matched under one quarter-turn lands on a 2x1 box.
        let mut pf = Sequence3D::zeros(o(), Dims::new(1, 2, 1));
        pf.set(0, 1, 0, 5.0);
        let m = MatchResult {
            rotation: 1,
            ..match_with(o(), 0.0, pf)
        };
        let r = reshape_match(&m, Dims::new(2, 1, 1));
        assert_eq!(r.total(), 5.0);
        assert_eq!(r.dims, Dims::new(2, 1, 1));
    }

    #[test]
    fn merge_examples() {
        let z1 = zone(1, &[(0, 0), (0, 1)]);
        let z2 = zone(2, &[(0, 1), (0, 2)]);
        let z3 = zone(3, &[(5, 5), (5, 6)]);
        let mk = |z: &ActiveZone, v: f64| Forecast {
            zone_id: z.zone_id,
            values: Sequence3D::from_fn(zone_origin(z, 0), Dims::new(1, 2, 1), |_, _, _| v),
            chosen_probability: 1.0,
            chosen_scenario: Some(0),
        };
        let merged = merge_zone_forecasts(&[mk(&z2, 6.0), mk(&z1, 4.0), mk(&z3, 9.0)]);
        assert_eq!(merged.iter().map(|f| f.zone_id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(merged[0].values.values(), &[4.0, 5.0]);
        assert_eq!(merged[1].values.values(), &[5.0, 6.0]);
        assert_eq!(merged[2].values.values(), &[9.0, 9.0]);

        let z4 = zone(4, &[(0, 1), (0, 2)]);
        let three = merge_zone_forecasts(&[mk(&z1, 0.0), mk(&z2, 3.0), mk(&z4, 6.0)]);
        assert_eq!(three[0].values.get(0, 1, 0), 3.0);
    }
}
