//! End-to-end forecast for one training end month.

use log::{info, warn};
use rayon::prelude::*;

use crate::cube::{extract_sequence, Dims};
use crate::error::{Error, Result};
use crate::forecaster::{
    cluster_matches, fallback_forecast, make_forecast, merge_zone_forecasts, scenario_records, Forecast, Scenario,
    ScenarioRecord,
};
use crate::grid::{format_decimal, FatalityField, ForecastRecord, TableRow};
use crate::matcher::{relax_search, HistoryIndex, MatchResult, SearchInput};
use crate::params::ModelParams;
use crate::zones::{detect_zones, ActiveZone, ZoneDetection};

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneRun {
    pub zone: ActiveZone,
    pub merged: bool,
    pub matches: Vec<MatchResult>,
    pub scenarios: Vec<Scenario>,
    pub relax_steps: usize,
    /// Forecast before overlapping zones are averaged.
    pub forecast: Forecast,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub train_end: i64,
    pub detection: Option<ZoneDetection>,
    pub zones: Vec<ZoneRun>,
    /// Final per-zone forecasts with shared cells averaged.
    pub forecasts: Vec<Forecast>,
    pub warnings: Vec<String>,
}

impl ForecastRun {
    fn empty(train_end: i64, detection: Option<ZoneDetection>, warning: String) -> Self {
        warn!("{warning}");
        Self {
            train_end,
            detection,
            zones: Vec::new(),
            forecasts: Vec::new(),
            warnings: vec![warning],
        }
    }

    pub fn forecast_records(&self) -> Vec<ForecastRecord> {
        self.forecasts.iter().flat_map(Forecast::records).collect()
    }

    pub fn scenario_records(&self) -> Vec<ScenarioRecord> {
        self.zones
            .iter()
            .flat_map(|z| scenario_records(z.zone.zone_id, &z.scenarios))
            .collect()
    }

    pub fn provenance_records(&self) -> Vec<ProvenanceRecord> {
        self.zones
            .iter()
            .flat_map(|z| {
                z.matches.iter().map(move |m| ProvenanceRecord {
                    zone_id: z.zone.zone_id,
                    m: m.clone(),
                })
            })
            .collect()
    }
}

/// One line of the match provenance report.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceRecord {
    pub zone_id: usize,
    pub m: MatchResult,
}

impl TableRow for ProvenanceRecord {
    type Key = (usize, (i64, i64, i64, Dims, u8));

    fn header() -> &'static [&'static str] {
        &[
            "zone_id", "t0", "lat0", "lon0", "W_lat", "W_lon", "L", "rotation", "emd", "r", "relaxed",
        ]
    }

    fn key(&self) -> Self::Key {
        (self.zone_id, self.m.sort_key())
    }

    fn cells(&self) -> Vec<String> {
        let m = &self.m;
        vec![
            self.zone_id.to_string(),
            m.origin.t.to_string(),
            m.origin.lat.to_string(),
            m.origin.lon.to_string(),
            m.dims.lat.to_string(),
            m.dims.lon.to_string(),
            m.dims.time.to_string(),
            m.rotation.to_string(),
            format_decimal(m.emd),
            format_decimal(m.r),
            m.relaxed.to_string(),
        ]
    }
}

fn forecast_zone(
    history: &FatalityField,
    index: &HistoryIndex,
    zone: &ActiveZone,
    merged: bool,
    train_end: i64,
    params: &ModelParams,
) -> Result<ZoneRun> {
    let t_start = train_end - params.input_window as i64 + 1;
    let seq = extract_sequence(history, zone, (t_start, train_end))?;
    let input = SearchInput::from_sequence(&seq, params)?;
    let outcome = relax_search(index, &input, train_end, params)?;
    let mut warnings = outcome.warnings;
    let target = Dims::new(zone.bbox.n_lat(), zone.bbox.n_lon(), params.horizon);
    let (scenarios, forecast) = if outcome.fallback {
        warnings.push(format!("zone {}: no similar history, zero forecast", zone.zone_id));
        (Vec::new(), fallback_forecast(zone, train_end + 1, params.horizon))
    } else {
        let scenarios = cluster_matches(&outcome.matches, target, params)?;
        let forecast = make_forecast(zone, &scenarios, train_end + 1)?;
        (scenarios, forecast)
    };
    Ok(ZoneRun {
        zone: zone.clone(),
        merged,
        matches: outcome.matches,
        scenarios,
        relax_steps: outcome.relax_steps,
        forecast,
        warnings,
    })
}

/// Detects zones over the input window ending at `train_end` and forecasts
/// the following `horizon` months for each. Only months up to `train_end`
/// are visible to the search.
pub fn run_forecast(field: &FatalityField, train_end: i64, params: &ModelParams) -> Result<ForecastRun> {
    params.validate()?;
    let history = field.truncated(train_end);
    let Some(bounds) = history.extent().bounds().copied() else {
        return Ok(ForecastRun::empty(
            train_end,
            None,
            format!("no history up to month {train_end}; forecast is empty"),
        ));
    };
    let first_needed = train_end - params.input_window as i64 + 1;
    if bounds.month_min > first_needed {
        return Err(Error::config(
            "train_end",
            format!(
                "needs history from month {first_needed} for a {}-month input window, events start at {}",
                params.input_window, bounds.month_min
            ),
        ));
    }
    let detection = detect_zones(&history, train_end, params)?;
    if detection.zones.is_empty() {
        return Ok(ForecastRun::empty(
            train_end,
            Some(detection),
            format!("no active zones in the window ending at month {train_end}; forecast is empty"),
        ));
    }
    info!("{} zones detected for train end {train_end}", detection.zones.len());
    let index = HistoryIndex::new(&history);
    let zones: Vec<ZoneRun> = detection
        .zones
        .par_iter()
        .map(|(zone, merged)| forecast_zone(&history, &index, zone, *merged, train_end, params))
        .collect::<Result<_>>()?;
    let raw: Vec<Forecast> = zones.iter().map(|z| z.forecast.clone()).collect();
    let forecasts = merge_zone_forecasts(&raw);
    let warnings = zones
        .iter()
        .flat_map(|z| z.warnings.iter().cloned())
        .collect::<Vec<_>>();
    for w in &warnings {
        warn!("{w}");
    }
    Ok(ForecastRun {
        train_end,
        detection: Some(detection),
        zones,
        forecasts,
        warnings,
    })
}
