//! Forecast metrics, benchmark comparison tables and the toy baselines.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::cube::{to_density_cube, to_density_cube_with, Dims, Origin, Sequence3D};
use crate::error::{Error, Result};
use crate::grid::{export_table, format_decimal, FatalityField, TableRow};
use crate::matcher::stride;
use crate::params::ModelParams;
use crate::transport::{active_ratio_counts, emd_with_rotation, solve_ot};

/// 5x5 neighbor weights for the spatial-lag distance.
pub const SPATIAL_WEIGHTS: [[f64; 5]; 5] = [
    [0.01, 0.05, 0.1, 0.05, 0.01],
    [0.05, 0.3, 0.5, 0.3, 0.05],
    [0.1, 0.5, 1.0, 0.5, 0.1],
    [0.05, 0.3, 0.5, 0.3, 0.05],
    [0.01, 0.05, 0.1, 0.05, 0.01],
];

/// Sum over months of the absolute difference of kernel-weighted totals.
pub fn spatial_distance_baseline(p1: &Sequence3D, p2: &Sequence3D, weights: &[[f64; 5]; 5]) -> Result<f64> {
    p1.check_same_shape(p2)?;
    if p1.dims.lat != 5 || p1.dims.lon != 5 {
        return Err(Error::Validation(format!(
            "spatial distance needs 5x5 patterns, got {}x{}",
            p1.dims.lat, p1.dims.lon
        )));
    }
    let weighted = |p: &Sequence3D, t: usize| -> f64 {
        let mut s = 0.0;
        for (la, row) in weights.iter().enumerate() {
            for (lo, w) in row.iter().enumerate() {
                s += p.get(la, lo, t) * w;
            }
        }
        s
    };
    Ok((0..p1.dims.time)
        .map(|t| (weighted(p1, t) - weighted(p2, t)).abs())
        .sum())
}

/// Sum of cell-wise absolute differences.
pub fn euclidean_baseline(p1: &Sequence3D, p2: &Sequence3D) -> Result<f64> {
    p1.check_same_shape(p2)?;
    Ok(p1.values().iter().zip(p2.values()).map(|(a, b)| (a - b).abs()).sum())
}

pub fn mse(obs: &[f64], pred: &[f64]) -> Result<f64> {
    if obs.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: obs.len(),
            got: pred.len(),
        });
    }
    if obs.is_empty() {
        return Err(Error::Validation("mse needs at least one value".into()));
    }
    Ok(obs.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / obs.len() as f64)
}

/// Past-future total over sequence total.
pub fn r_inc(sequence: &Sequence3D, past_future: &Sequence3D) -> Result<f64> {
    let base = sequence.total();
    if base <= 0.0 {
        return Err(Error::Validation(
            "ratio of increase needs a sequence with fatalities".into(),
        ));
    }
    Ok(past_future.total() / base)
}

/// `ln((benchmark + 1) / (model + 1))`; positive when the model does better.
pub fn log_ratio(metric_benchmark: f64, metric_model: f64) -> f64 {
    ((metric_benchmark + 1.0) / (metric_model + 1.0)).ln()
}

/// `sign(x) * ln(1 + |x|)`.
pub fn log_modulus(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Mean and standard error `sd / sqrt(n)` with the sample standard
/// deviation; the error is 0 for a single value.
pub fn mean_se(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, var.sqrt() / (n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneMetrics {
    /// `|sum obs - sum pred|` over the zone and period.
    pub abs_error: f64,
    /// Shape distance; absent when either side has no fatalities.
    pub emd: Option<f64>,
    pub mape_logmod: f64,
    pub max_error: f64,
}

/// Zone-period metrics for two sequences over the same box and months.
pub fn zone_metrics(obs: &Sequence3D, pred: &Sequence3D) -> Result<ZoneMetrics> {
    obs.check_same_shape(pred)?;
    let (so, sp) = (obs.total(), pred.total());
    let emd = if so > 0.0 && sp > 0.0 {
        Some(solve_ot(&to_density_cube(pred)?, &to_density_cube(obs)?)?.objective)
    } else {
        None
    };
    let denom = if so == 0.0 { 1.0 } else { so };
    let max_error = obs
        .values()
        .iter()
        .zip(pred.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ZoneMetrics {
        abs_error: (so - sp).abs(),
        emd,
        mape_logmod: log_modulus((sp - so) / denom * 100.0),
        max_error,
    })
}

/// One forecast cell-month joined with its observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRecord {
    pub zone_id: usize,
    /// First forecast month of the run this record belongs to.
    pub period: i64,
    pub lat: i64,
    pub lon: i64,
    pub month: i64,
    pub obs: f64,
    pub pred: f64,
    pub benchmark: Option<f64>,
}

impl CellRecord {
    pub fn horizon(&self) -> usize {
        (self.month - self.period + 1) as usize
    }

    pub fn log_ratio_ae(&self) -> Option<f64> {
        self.benchmark
            .map(|b| log_ratio((self.obs - b).abs(), (self.obs - self.pred).abs()))
    }

    pub fn log_ratio_se(&self) -> Option<f64> {
        self.benchmark
            .map(|b| log_ratio((self.obs - b).powi(2), (self.obs - self.pred).powi(2)))
    }
}

impl TableRow for CellRecord {
    type Key = (i64, usize, i64, i64, i64);

    fn header() -> &'static [&'static str] {
        &[
            "zone_id",
            "period",
            "lat",
            "lon",
            "month",
            "horizon",
            "obs",
            "pred",
            "benchmark",
            "log_ratio_ae",
            "log_ratio_se",
        ]
    }

    fn key(&self) -> Self::Key {
        (self.period, self.zone_id, self.month, self.lat, self.lon)
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_value).unwrap_or_default();
        vec![
            self.zone_id.to_string(),
            self.period.to_string(),
            self.lat.to_string(),
            self.lon.to_string(),
            self.month.to_string(),
            self.horizon().to_string(),
            fmt_value(self.obs),
            fmt_value(self.pred),
            opt(self.benchmark),
            opt(self.log_ratio_ae()),
            opt(self.log_ratio_se()),
        ]
    }
}

fn fmt_value(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PeriodKey {
    Period(i64),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HorizonKey {
    H(usize),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableCell {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean per-cell log ratio by period and horizon, with an all-horizons
/// column and an all-periods row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioTable {
    pub title: &'static str,
    pub periods: Vec<i64>,
    pub horizon: usize,
    pub cells: BTreeMap<(PeriodKey, HorizonKey), TableCell>,
}

impl LogRatioTable {
    fn build(
        title: &'static str,
        records: &[CellRecord],
        horizon: usize,
        value: impl Fn(&CellRecord) -> Option<f64>,
    ) -> Self {
        let mut groups: BTreeMap<(PeriodKey, HorizonKey), Vec<f64>> = BTreeMap::new();
        let mut periods = Vec::new();
        for r in records {
            let Some(v) = value(r) else { continue };
            let (p, h) = (PeriodKey::Period(r.period), HorizonKey::H(r.horizon()));
            for key in [
                (p, h),
                (p, HorizonKey::All),
                (PeriodKey::All, h),
                (PeriodKey::All, HorizonKey::All),
            ] {
                groups.entry(key).or_default().push(v);
            }
            periods.push(r.period);
        }
        periods.sort_unstable();
        periods.dedup();
        let cells = groups
            .into_iter()
            .filter_map(|(k, vs)| mean_se(&vs).map(|(mean, se)| (k, TableCell { mean, se, n: vs.len() })))
            .collect();
        Self {
            title,
            periods,
            horizon,
            cells,
        }
    }

    pub fn get(&self, period: PeriodKey, horizon: HorizonKey) -> Option<&TableCell> {
        self.cells.get(&(period, horizon))
    }

    /// One row of means and one of standard errors per period, then the
    /// same for all periods pooled.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["period".to_string(), "stat".to_string()];
        header.extend((1..=self.horizon).map(|h| format!("h{h}")));
        header.push("all_horizons".into());
        wtr.write_record(&header)?;
        let mut rows: Vec<(String, PeriodKey)> = self
            .periods
            .iter()
            .map(|&p| (p.to_string(), PeriodKey::Period(p)))
            .collect();
        rows.push(("all_periods".into(), PeriodKey::All));
        let hkeys: Vec<HorizonKey> = (1..=self.horizon).map(HorizonKey::H).chain([HorizonKey::All]).collect();
        for (label, pk) in rows {
            for stat in ["mean", "se"] {
                let mut rec = vec![label.clone(), stat.to_string()];
                for &hk in &hkeys {
                    rec.push(
                        self.get(pk, hk)
                            .map_or(String::new(), |c| fmt_value(if stat == "mean" { c.mean } else { c.se })),
                    );
                }
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Metrics for one zone in one forecast period.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSummary {
    pub zone_id: usize,
    pub period: i64,
    pub model: ZoneMetrics,
    pub benchmark: Option<ZoneMetrics>,
    pub obs_total: f64,
    pub pred_total: f64,
    pub mse: f64,
    pub bench_mse: Option<f64>,
    /// Observed total in the forecast months over the input window total.
    pub r_inc: Option<f64>,
    /// Per horizon: observed total, predicted total, benchmark total.
    pub by_horizon: Vec<(f64, f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub horizon: usize,
    pub records: Vec<CellRecord>,
    pub zones: Vec<ZoneSummary>,
    pub ae_table: Option<LogRatioTable>,
    pub se_table: Option<LogRatioTable>,
}

impl EvalReport {
    /// Aggregates are derived from `records` only.
    pub fn build(mut records: Vec<CellRecord>, horizon: usize) -> Result<Self> {
        for r in &records {
            if r.month < r.period || r.horizon() > horizon {
                return Err(Error::Validation(format!(
                    "zone {} month {} is outside the {horizon}-month horizon starting at {}",
                    r.zone_id, r.month, r.period
                )));
            }
        }
        records.sort_by_key(|r| r.key());
        let with_bench = !records.is_empty() && records.iter().all(|r| r.benchmark.is_some());
        let mut groups: BTreeMap<(i64, usize), Vec<&CellRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry((r.period, r.zone_id)).or_default().push(r);
        }
        let zones = groups
            .into_iter()
            .map(|((period, zone_id), rs)| summarize_zone(zone_id, period, &rs, horizon))
            .collect::<Result<Vec<_>>>()?;
        let cell_level = dedup_cells(&records);
        let (ae_table, se_table) = if with_bench {
            (
                Some(LogRatioTable::build(
                    "absolute_error_log_ratio",
                    &cell_level,
                    horizon,
                    CellRecord::log_ratio_ae,
                )),
                Some(LogRatioTable::build(
                    "squared_error_log_ratio",
                    &cell_level,
                    horizon,
                    CellRecord::log_ratio_se,
                )),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            horizon,
            records,
            zones,
            ae_table,
            se_table,
        })
    }

    /// Adds each zone's ratio of increase using the observed totals over the
    /// `input_window` months before its period.
    pub fn with_r_inc(mut self, field: &FatalityField, input_window: usize) -> Self {
        for z in &mut self.zones {
            let rs: Vec<&CellRecord> = self
                .records
                .iter()
                .filter(|r| r.zone_id == z.zone_id && r.period == z.period)
                .collect();
            let (lat0, lat1, lon0, lon1) = record_box(&rs);
            let start = z.period - input_window as i64;
            let base: u64 = field
                .iter()
                .filter(|(k, _)| {
                    (lat0..=lat1).contains(&k.lat)
                        && (lon0..=lon1).contains(&k.lon)
                        && (start..z.period).contains(&k.month)
                })
                .map(|(_, v)| v)
                .sum();
            z.r_inc = (base > 0).then(|| z.obs_total / base as f64);
        }
        self
    }

    /// Cell-months with a benchmark where the model's squared error is lower.
    pub fn share_improved(&self) -> Option<f64> {
        let ratios: Vec<f64> = dedup_cells(&self.records)
            .iter()
            .filter_map(CellRecord::log_ratio_se)
            .collect();
        (!ratios.is_empty()).then(|| ratios.iter().filter(|&&v| v > 0.0).count() as f64 / ratios.len() as f64)
    }

    /// Flat `zone_id,period,horizon,metric,value` rows.
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        let mut push = |zone: &str, period: String, horizon: String, metric: &'static str, value: f64| {
            rows.push(MetricRow {
                seq: rows.len(),
                zone_id: zone.to_string(),
                period,
                horizon,
                metric,
                value,
            })
        };
        for z in &self.zones {
            let zid = z.zone_id.to_string();
            let p = z.period.to_string();
            let all = || "all".to_string();
            push(&zid, p.clone(), all(), "obs_total", z.obs_total);
            push(&zid, p.clone(), all(), "pred_total", z.pred_total);
            push(&zid, p.clone(), all(), "abs_error", z.model.abs_error);
            if let Some(e) = z.model.emd {
                push(&zid, p.clone(), all(), "emd", e);
            }
            push(&zid, p.clone(), all(), "mape_logmod", z.model.mape_logmod);
            push(&zid, p.clone(), all(), "max_error", z.model.max_error);
            push(&zid, p.clone(), all(), "mse", z.mse);
            if let Some(r) = z.r_inc {
                push(&zid, p.clone(), all(), "r_inc", r);
            }
            if let (Some(b), Some(bm)) = (z.benchmark, z.bench_mse) {
                push(&zid, p.clone(), all(), "bench_abs_error", b.abs_error);
                if let Some(e) = b.emd {
                    push(&zid, p.clone(), all(), "bench_emd", e);
                }
                push(&zid, p.clone(), all(), "bench_mape_logmod", b.mape_logmod);
                push(&zid, p.clone(), all(), "bench_max_error", b.max_error);
                push(&zid, p.clone(), all(), "bench_mse", bm);
                push(
                    &zid,
                    p.clone(),
                    all(),
                    "log_ratio_abs_error",
                    log_ratio(b.abs_error, z.model.abs_error),
                );
                if let (Some(eb), Some(em)) = (b.emd, z.model.emd) {
                    push(&zid, p.clone(), all(), "log_ratio_emd", log_ratio(eb, em));
                }
                push(&zid, p.clone(), all(), "log_ratio_mse", log_ratio(bm, z.mse));
            }
            for (i, &(o, pr, b)) in z.by_horizon.iter().enumerate() {
                let h = (i + 1).to_string();
                push(&zid, p.clone(), h.clone(), "abs_error", (o - pr).abs());
                if let Some(b) = b {
                    push(&zid, p.clone(), h.clone(), "bench_abs_error", (o - b).abs());
                    push(
                        &zid,
                        p.clone(),
                        h,
                        "log_ratio_abs_error",
                        log_ratio((o - b).abs(), (o - pr).abs()),
                    );
                }
            }
        }
        for (name, table) in [("log_ratio_ae", &self.ae_table), ("log_ratio_se", &self.se_table)] {
            let Some(t) = table else { continue };
            for (&(pk, hk), c) in &t.cells {
                let period = match pk {
                    PeriodKey::Period(p) => p.to_string(),
                    PeriodKey::All => "all".into(),
                };
                let horizon = match hk {
                    HorizonKey::H(h) => h.to_string(),
                    HorizonKey::All => "all".into(),
                };
                let (mean_name, se_name) = if name == "log_ratio_ae" {
                    ("log_ratio_ae_mean", "log_ratio_ae_se")
                } else {
                    ("log_ratio_se_mean", "log_ratio_se_se")
                };
                push("all", period.clone(), horizon.clone(), mean_name, c.mean);
                push("all", period, horizon, se_name, c.se);
            }
        }
        if let Some(s) = self.share_improved() {
            push("all", "all".into(), "all".into(), "share_improved", s);
        }
        rows
    }

    /// Writes the report files into `dir`: `evaluation.csv`, `cells.csv`,
    /// and with a benchmark `table_ae.csv`, `table_se.csv`,
    /// `zone_scatter.csv` and `hist_se_log_ratio.csv`.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = vec!["evaluation.csv".to_string(), "cells.csv".to_string()];
        export_table(&self.metric_rows(), &dir.join("evaluation.csv"))?;
        export_table(&self.records, &dir.join("cells.csv"))?;
        if let (Some(ae), Some(se)) = (&self.ae_table, &self.se_table) {
            ae.write_csv(std::fs::File::create(dir.join("table_ae.csv"))?)?;
            se.write_csv(std::fs::File::create(dir.join("table_se.csv"))?)?;
            self.write_zone_scatter(std::fs::File::create(dir.join("zone_scatter.csv"))?)?;
            self.write_histogram(std::fs::File::create(dir.join("hist_se_log_ratio.csv"))?)?;
            written.extend(
                [
                    "table_ae.csv",
                    "table_se.csv",
                    "zone_scatter.csv",
                    "hist_se_log_ratio.csv",
                ]
                .map(String::from),
            );
        }
        Ok(written)
    }

    fn write_zone_scatter<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "zone_id",
            "period",
            "log_ratio_abs_error",
            "log_ratio_emd",
            "bench_mape_logmod",
            "r_inc",
        ])?;
        let opt = |v: Option<f64>| v.map(fmt_value).unwrap_or_default();
        for z in &self.zones {
            let Some(b) = z.benchmark else { continue };
            let lr_emd = match (b.emd, z.model.emd) {
                (Some(eb), Some(em)) => Some(log_ratio(eb, em)),
                _ => None,
            };
            wtr.write_record([
                z.zone_id.to_string(),
                z.period.to_string(),
                fmt_value(log_ratio(b.abs_error, z.model.abs_error)),
                opt(lr_emd),
                fmt_value(b.mape_logmod),
                opt(z.r_inc),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Unit-width bins of the per-cell squared error log ratio.
    fn write_histogram<W: Write>(&self, out: W) -> Result<()> {
        let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
        for v in dedup_cells(&self.records).iter().filter_map(CellRecord::log_ratio_se) {
            *bins.entry(v.floor() as i64).or_default() += 1;
        }
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["bin_lo", "bin_hi", "count"])?;
        for (lo, n) in bins {
            wtr.write_record([lo.to_string(), (lo + 1).to_string(), n.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    seq: usize,
    pub zone_id: String,
    pub period: String,
    pub horizon: String,
    pub metric: &'static str,
    pub value: f64,
}

impl TableRow for MetricRow {
    type Key = usize;

    fn header() -> &'static [&'static str] {
        &["zone_id", "period", "horizon", "metric", "value"]
    }

    fn key(&self) -> usize {
        self.seq
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.zone_id.clone(),
            self.period.clone(),
            self.horizon.clone(),
            self.metric.to_string(),
            fmt_value(self.value),
        ]
    }
}

fn record_box(rs: &[&CellRecord]) -> (i64, i64, i64, i64) {
    let lat0 = rs.iter().map(|r| r.lat).min().unwrap_or(0);
    let lat1 = rs.iter().map(|r| r.lat).max().unwrap_or(0);
    let lon0 = rs.iter().map(|r| r.lon).min().unwrap_or(0);
    let lon1 = rs.iter().map(|r| r.lon).max().unwrap_or(0);
    (lat0, lat1, lon0, lon1)
}

fn summarize_zone(zone_id: usize, period: i64, rs: &[&CellRecord], horizon: usize) -> Result<ZoneSummary> {
    let (lat0, lat1, lon0, lon1) = record_box(rs);
    let origin = Origin {
        lat: lat0,
        lon: lon0,
        t: period,
    };
    let dims = Dims::new((lat1 - lat0 + 1) as usize, (lon1 - lon0 + 1) as usize, horizon);
    let mut obs = Sequence3D::zeros(origin, dims);
    let mut pred = Sequence3D::zeros(origin, dims);
    let with_bench = rs.iter().all(|r| r.benchmark.is_some());
    let mut bench = Sequence3D::zeros(origin, dims);
    let mut by_horizon = vec![(0.0, 0.0, with_bench.then_some(0.0)); horizon];
    for r in rs {
        let (la, lo, t) = (
            (r.lat - lat0) as usize,
            (r.lon - lon0) as usize,
            (r.month - period) as usize,
        );
        obs.set(la, lo, t, r.obs);
        pred.set(la, lo, t, r.pred);
        let h = &mut by_horizon[t];
        h.0 += r.obs;
        h.1 += r.pred;
        if let (Some(b), Some(acc)) = (r.benchmark, h.2.as_mut()) {
            bench.set(la, lo, t, b);
            *acc += b;
        }
    }
    let obs_v: Vec<f64> = rs.iter().map(|r| r.obs).collect();
    let pred_v: Vec<f64> = rs.iter().map(|r| r.pred).collect();
    let (benchmark, bench_mse) = if with_bench {
        let bench_v: Vec<f64> = rs.iter().map(|r| r.benchmark.unwrap_or(0.0)).collect();
        (Some(zone_metrics(&obs, &bench)?), Some(mse(&obs_v, &bench_v)?))
    } else {
        (None, None)
    };
    Ok(ZoneSummary {
        zone_id,
        period,
        model: zone_metrics(&obs, &pred)?,
        benchmark,
        obs_total: obs.total(),
        pred_total: pred.total(),
        mse: mse(&obs_v, &pred_v)?,
        bench_mse,
        r_inc: None,
        by_horizon,
    })
}

/// One record per (period, cell, month); overlapping zone predictions are
/// averaged.
fn dedup_cells(records: &[CellRecord]) -> Vec<CellRecord> {
    type Sums = (CellRecord, f64, f64, usize);
    let mut acc: BTreeMap<(i64, i64, i64, i64), Sums> = BTreeMap::new();
    for r in records {
        let e = acc
            .entry((r.period, r.month, r.lat, r.lon))
            .or_insert((*r, 0.0, 0.0, 0));
        e.1 += r.pred;
        e.2 += r.benchmark.unwrap_or(0.0);
        e.3 += 1;
    }
    acc.into_values()
        .map(|(mut r, p, b, n)| {
            r.pred = p / n as f64;
            r.benchmark = r.benchmark.map(|_| b / n as f64);
            r
        })
        .collect()
}

/// A historical window and the months that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSample {
    pub sequence: Sequence3D,
    pub past_future: Sequence3D,
}

/// Windows of size `dims` on the stride lattice whose past futures end by
/// `last_month`; windows without fatalities are skipped.
pub fn collect_samples(field: &FatalityField, dims: Dims, last_month: i64, params: &ModelParams) -> Vec<PatternSample> {
    let Some(b) = field.extent().bounds().copied() else {
        return Vec::new();
    };
    let index = crate::matcher::HistoryIndex::new(field);
    let (s_lat, s_lon, s_t) = (
        stride(dims.lat, params.stride_frac) as i64,
        stride(dims.lon, params.stride_frac) as i64,
        stride(dims.time, params.stride_frac) as i64,
    );
    let mut out = Vec::new();
    let mut t0 = b.month_min;
    while t0 + (dims.time + params.horizon) as i64 - 1 <= last_month {
        let mut lat0 = b.lat_min;
        while lat0 + dims.lat as i64 - 1 <= b.lat_max {
            let mut lon0 = b.lon_min;
            while lon0 + dims.lon as i64 - 1 <= b.lon_max {
                let origin = Origin {
                    lat: lat0,
                    lon: lon0,
                    t: t0,
                };
                let sequence = index.extract(origin, dims);
                if !sequence.is_all_zero() {
                    let pf_origin = Origin {
                        t: t0 + dims.time as i64,
                        ..origin
                    };
                    let past_future = index.extract(pf_origin, Dims::new(dims.lat, dims.lon, params.horizon));
                    out.push(PatternSample { sequence, past_future });
                }
                lon0 += s_lon;
            }
            lat0 += s_lat;
        }
        t0 += s_t;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n_pairs: usize,
    pub mean_delta_r_inc: f64,
    pub se_delta_r_inc: f64,
    /// Pairs where both past futures have fatalities.
    pub n_pf: usize,
    pub mean_emd_pf: Option<f64>,
    pub se_emd_pf: Option<f64>,
}

struct PairOutcome {
    x: f64,
    delta_r_inc: f64,
    emd_pf: Option<f64>,
}

/// Bins sample pairs of equal size and comparable activity by pattern EMD
/// and reports the mean outcome differences per bin.
pub fn pattern_future_correlation(
    samples: &[PatternSample],
    params: &ModelParams,
    bin_width: f64,
) -> Result<Vec<CorrelationBin>> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::config("bin_width", "must be > 0"));
    }
    let cubes = samples
        .iter()
        .map(|s| to_density_cube_with(&s.sequence, params.coords))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (i + 1..samples.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| samples[i].sequence.dims == samples[j].sequence.dims)
        .collect();
    let outcomes: Vec<Option<PairOutcome>> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<Option<PairOutcome>> {
            let r = active_ratio_counts(cubes[i].n_active, cubes[j].n_active)?;
            if r >= params.thr2 {
                return Ok(None);
            }
            let (x, k) = emd_with_rotation(&cubes[i], &cubes[j])?;
            let (a, b) = (&samples[i], &samples[j]);
            let delta_r_inc = (r_inc(&a.sequence, &a.past_future)? - r_inc(&b.sequence, &b.past_future)?).abs();
            let emd_pf = if a.past_future.is_all_zero() || b.past_future.is_all_zero() {
                None
            } else {
                let pa = to_density_cube_with(&a.past_future.rotated(k), params.coords)?;
                let pb = to_density_cube_with(&b.past_future, params.coords)?;
                Some(solve_ot(&pa, &pb)?.objective)
            };
            Ok(Some(PairOutcome { x, delta_r_inc, emd_pf }))
        })
        .collect::<Result<_>>()?;
    let mut bins: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for o in outcomes.into_iter().flatten() {
        let e = bins.entry((o.x / bin_width + 1e-9).floor() as u64).or_default();
        e.0.push(o.delta_r_inc);
        e.1.extend(o.emd_pf);
    }
    Ok(bins
        .into_iter()
        .map(|(b, (dr, pf))| {
            let (mean_dr, se_dr) = mean_se(&dr).expect("non-empty bin");
            let pf_stats = mean_se(&pf);
            CorrelationBin {
                bin_lo: b as f64 * bin_width,
                bin_hi: (b + 1) as f64 * bin_width,
                n_pairs: dr.len(),
                mean_delta_r_inc: mean_dr,
                se_delta_r_inc: se_dr,
                n_pf: pf.len(),
                mean_emd_pf: pf_stats.map(|s| s.0),
                se_emd_pf: pf_stats.map(|s| s.1),
            }
        })
        .collect())
}

impl TableRow for CorrelationBin {
    type Key = (u64, u64);

    fn header() -> &'static [&'static str] {
        &[
            "bin_lo",
            "bin_hi",
            "n_pairs",
            "mean_delta_r_inc",
            "se_delta_r_inc",
            "n_pf",
            "mean_emd_pf",
            "se_emd_pf",
        ]
    }

    fn key(&self) -> Self::Key {
        (self.bin_lo.to_bits(), self.bin_hi.to_bits())
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(format_decimal).unwrap_or_default();
        vec![
            format_decimal(self.bin_lo),
            format_decimal(self.bin_hi),
            self.n_pairs.to_string(),
            fmt_value(self.mean_delta_r_inc),
            fmt_value(self.se_delta_r_inc),
            self.n_pf.to_string(),
            opt(self.mean_emd_pf),
            opt(self.se_emd_pf),
        ]
    }
}
