//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::load_params;
use crate::error::{Error, Result};
use crate::evaluator::{CellRecord, EvalReport};
use crate::grid::{export_table, format_decimal, ingest_events, read_forecast_table, FatalityField, TableRow};
use crate::params::{CoordMode, ModelParams};
use crate::pipeline::run_forecast;
use crate::toy::toy_report;
use crate::zones::{coverage_stats, detect_zones, ActiveZone, Cell, CoverageRow, ZoneDetection};

#[derive(Debug, Parser)]
#[command(
    name = "shapegrid",
    version,
    about = "Shape-matching forecasts for gridded monthly fatality data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` parameter file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; output does not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub coords: Option<CoordMode>,
    #[arg(long, value_enum)]
    pub relax: Option<Switch>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Active zones for the input window ending at the training end month.
    Detect {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        train_end: i64,
        #[command(flatten)]
        common: Common,
    },
    /// Forecast every active zone for the months after the training end.
    Forecast {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        train_end: i64,
        #[command(flatten)]
        common: Common,
    },
    /// Score forecast files against observed events and an optional benchmark.
    Evaluate {
        /// Forecast table; repeat for several forecast periods.
        #[arg(long, required = true)]
        forecast: Vec<PathBuf>,
        /// Observed events.
        #[arg(long)]
        events: PathBuf,
        /// Benchmark predictions in the forecast table layout.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Share of later fatalities and active cells that fall inside zones.
    Coverage {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        first_train_end: i64,
        #[arg(long)]
        last_train_end: i64,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the toy pattern distances and check them.
    ToyVerify,
}

/// 1 for bad input or configuration, 2 for internal failures.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::LengthMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::CellMismatch(_)
        | Error::Config { .. }
        | Error::Csv(_) => 1,
        Error::Degenerate(_)
        | Error::MassMismatch { .. }
        | Error::NoMatches
        | Error::SolverStalled(_)
        | Error::Io(_) => 2,
    }
}

/// Runs a parsed command; `Ok(false)` means a check failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::ToyVerify => Ok(cmd_toy_verify()?),
        Command::Detect {
            events,
            train_end,
            common,
        } => with_workers(common.workers, || cmd_detect(&events, train_end, &common)).map(|()| true),
        Command::Forecast {
            events,
            train_end,
            common,
        } => with_workers(common.workers, || cmd_forecast(&events, train_end, &common)).map(|()| true),
        Command::Evaluate {
            forecast,
            events,
            benchmark,
            common,
        } => with_workers(common.workers, || {
            cmd_evaluate(&forecast, &events, benchmark.as_deref(), &common)
        })
        .map(|()| true),
        Command::Coverage {
            events,
            first_train_end,
            last_train_end,
            common,
        } => with_workers(common.workers, || {
            cmd_coverage(&events, first_train_end, last_train_end, &common)
        })
        .map(|()| true),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(Error::config("workers", "must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(f),
    }
}

/// Defaults, then the config file, then command-line flags.
pub fn resolve_params(common: &Common) -> Result<ModelParams> {
    let mut params = load_params(common.config.as_deref())?;
    if let Some(c) = common.coords {
        params.coords = c;
    }
    if let Some(r) = common.relax {
        params.relax = r == Switch::On;
    }
    params.validate()?;
    Ok(params)
}

fn require_file(field: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{} does not exist", path.display())))
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::config("out", format!("cannot create {}: {e}", dir.display())))
}

fn write_manifest(dir: &Path, command: &str, inputs: &[(&str, String)], params: &ModelParams) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "command = {command}");
    let _ = writeln!(text, "version = {}", env!("CARGO_PKG_VERSION"));
    for (k, v) in inputs {
        let _ = writeln!(text, "{k} = {v}");
    }
    for line in params.manifest_lines() {
        let _ = writeln!(text, "{line}");
    }
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

struct ZoneRow<'a> {
    zone: &'a ActiveZone,
    merged: bool,
}

impl TableRow for ZoneRow<'_> {
    type Key = usize;

    fn header() -> &'static [&'static str] {
        &[
            "zone_id", "lat_min", "lat_max", "lon_min", "lon_max", "n_cells", "merged",
        ]
    }

    fn key(&self) -> usize {
        self.zone.zone_id
    }

    fn cells(&self) -> Vec<String> {
        let b = &self.zone.bbox;
        vec![
            self.zone.zone_id.to_string(),
            b.lat_min.to_string(),
            b.lat_max.to_string(),
            b.lon_min.to_string(),
            b.lon_max.to_string(),
            self.zone.cells.len().to_string(),
            self.merged.to_string(),
        ]
    }
}

struct ZoneCellRow {
    zone_id: usize,
    cell: Cell,
}

impl TableRow for ZoneCellRow {
    type Key = (usize, Cell);

    fn header() -> &'static [&'static str] {
        &["zone_id", "lat", "lon"]
    }

    fn key(&self) -> Self::Key {
        (self.zone_id, self.cell)
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.zone_id.to_string(),
            self.cell.0.to_string(),
            self.cell.1.to_string(),
        ]
    }
}

struct SingletonRow(Cell);

impl TableRow for SingletonRow {
    type Key = Cell;

    fn header() -> &'static [&'static str] {
        &["lat", "lon"]
    }

    fn key(&self) -> Cell {
        self.0
    }

    fn cells(&self) -> Vec<String> {
        vec![self.0 .0.to_string(), self.0 .1.to_string()]
    }
}

impl TableRow for CoverageRow {
    type Key = i64;

    fn header() -> &'static [&'static str] {
        &["train_end", "pct_fatalities", "pct_active_cells"]
    }

    fn key(&self) -> i64 {
        self.train_end
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.train_end.to_string(),
            format_decimal(self.pct_fatalities),
            format_decimal(self.pct_active_cells),
        ]
    }
}

fn write_zone_reports(dir: &Path, zones: &[(ActiveZone, bool)], singletons: &[Cell]) -> Result<()> {
    let rows: Vec<ZoneRow> = zones
        .iter()
        .map(|(zone, merged)| ZoneRow { zone, merged: *merged })
        .collect();
    export_table(&rows, &dir.join("zones.csv"))?;
    let cells: Vec<ZoneCellRow> = zones
        .iter()
        .flat_map(|(z, _)| {
            z.cells.iter().map(|&cell| ZoneCellRow {
                zone_id: z.zone_id,
                cell,
            })
        })
        .collect();
    export_table(&cells, &dir.join("zone_cells.csv"))?;
    let singles: Vec<SingletonRow> = singletons.iter().map(|&c| SingletonRow(c)).collect();
    export_table(&singles, &dir.join("singletons.csv"))
}

pub fn cmd_detect(events: &Path, train_end: i64, common: &Common) -> Result<()> {
    let params = resolve_params(common)?;
    require_file("events", events)?;
    let field = ingest_events(events)?;
    prepare_out(&common.out)?;
    let detection = if field.extent().bounds().is_some() {
        detect_zones(&field, train_end, &params)?
    } else {
        log::warn!("events file has no rows; zone report is empty");
        ZoneDetection {
            zones: Vec::new(),
            singletons: Vec::new(),
            grid: crate::grid::aggregate(&field, train_end, train_end)?,
        }
    };
    write_zone_reports(&common.out, &detection.zones, &detection.singletons)?;
    write_manifest(
        &common.out,
        "detect",
        &[
            ("events", events.display().to_string()),
            ("train_end", train_end.to_string()),
        ],
        &params,
    )?;
    println!(
        "{} zones, {} eroded singletons -> {}",
        detection.zones.len(),
        detection.singletons.len(),
        common.out.display()
    );
    Ok(())
}

pub fn cmd_forecast(events: &Path, train_end: i64, common: &Common) -> Result<()> {
    let params = resolve_params(common)?;
    require_file("events", events)?;
    let field = ingest_events(events)?;
    prepare_out(&common.out)?;
    let run = run_forecast(&field, train_end, &params)?;
    let (zones, singletons) = run
        .detection
        .as_ref()
        .map_or((Vec::new(), Vec::new()), |d| (d.zones.clone(), d.singletons.clone()));
    write_zone_reports(&common.out, &zones, &singletons)?;
    let records = run.forecast_records();
    export_table(&records, &common.out.join("forecast.csv"))?;
    export_table(&run.scenario_records(), &common.out.join("scenarios.csv"))?;
    export_table(&run.provenance_records(), &common.out.join("provenance.csv"))?;
    write_manifest(
        &common.out,
        "forecast",
        &[
            ("events", events.display().to_string()),
            ("train_end", train_end.to_string()),
        ],
        &params,
    )?;
    println!(
        "{} zones, {} forecast rows, {} warnings -> {}",
        run.zones.len(),
        records.len(),
        run.warnings.len(),
        common.out.display()
    );
    Ok(())
}

/// Joins forecast rows with observations and, if given, benchmark rows.
/// Each forecast file is one period starting at its earliest month.
pub fn join_records(
    forecasts: &[Vec<crate::grid::ForecastRecord>],
    observed: &FatalityField,
    benchmark: Option<&[crate::grid::ForecastRecord]>,
) -> Result<Vec<CellRecord>> {
    let bench_map = match benchmark {
        None => None,
        Some(rows) => {
            let mut map = BTreeMap::new();
            for r in rows {
                if map.insert((r.lat, r.lon, r.month), r.pred).is_some() {
                    return Err(Error::CellMismatch(format!(
                        "benchmark has more than one row for lat {} lon {} month {}",
                        r.lat, r.lon, r.month
                    )));
                }
            }
            Some(map)
        }
    };
    let obs_bounds = observed.extent().bounds().copied();
    let mut out = Vec::new();
    for rows in forecasts {
        let Some(period) = rows.iter().map(|r| r.month).min() else {
            continue;
        };
        for r in rows {
            let covered = obs_bounds.is_some_and(|b| (b.month_min..=b.month_max).contains(&r.month));
            if !covered {
                return Err(Error::CellMismatch(format!(
                    "observations do not cover month {} (zone {}, lat {}, lon {})",
                    r.month, r.zone_id, r.lat, r.lon
                )));
            }
            let benchmark = match &bench_map {
                None => None,
                Some(m) => Some(*m.get(&(r.lat, r.lon, r.month)).ok_or_else(|| {
                    Error::CellMismatch(format!(
                        "benchmark has no row for lat {} lon {} month {}",
                        r.lat, r.lon, r.month
                    ))
                })?),
            };
            out.push(CellRecord {
                zone_id: r.zone_id,
                period,
                lat: r.lat,
                lon: r.lon,
                month: r.month,
                obs: observed.get(r.lon, r.lat, r.month) as f64,
                pred: r.pred,
                benchmark,
            });
        }
    }
    Ok(out)
}

pub fn cmd_evaluate(forecasts: &[PathBuf], events: &Path, benchmark: Option<&Path>, common: &Common) -> Result<()> {
    let params = resolve_params(common)?;
    for f in forecasts {
        require_file("forecast", f)?;
    }
    require_file("events", events)?;
    if let Some(b) = benchmark {
        require_file("benchmark", b)?;
    }
    let observed = ingest_events(events)?;
    let tables = forecasts
        .iter()
        .map(|f| read_forecast_table(f))
        .collect::<Result<Vec<_>>>()?;
    let bench = benchmark.map(read_forecast_table).transpose()?;
    prepare_out(&common.out)?;
    let records = join_records(&tables, &observed, bench.as_deref())?;
    let report = EvalReport::build(records, params.horizon)?.with_r_inc(&observed, params.input_window);
    let written = report.write_all(&common.out)?;
    let mut inputs = vec![("events", events.display().to_string())];
    for f in forecasts {
        inputs.push(("forecast", f.display().to_string()));
    }
    if let Some(b) = benchmark {
        inputs.push(("benchmark", b.display().to_string()));
    }
    write_manifest(&common.out, "evaluate", &inputs, &params)?;
    if let Some(t) = &report.ae_table {
        if let Some(c) = t.get(crate::evaluator::PeriodKey::All, crate::evaluator::HorizonKey::All) {
            println!("absolute error log ratio {:.4} (se {:.4}, n {})", c.mean, c.se, c.n);
        }
    }
    if let Some(t) = &report.se_table {
        if let Some(c) = t.get(crate::evaluator::PeriodKey::All, crate::evaluator::HorizonKey::All) {
            println!("squared error log ratio {:.4} (se {:.4}, n {})", c.mean, c.se, c.n);
        }
    }
    println!("{} cell records, wrote {}", report.records.len(), written.join(", "));
    Ok(())
}

pub fn cmd_coverage(events: &Path, first: i64, last: i64, common: &Common) -> Result<()> {
    let params = resolve_params(common)?;
    require_file("events", events)?;
    if first > last {
        return Err(Error::config(
            "first_train_end",
            format!("{first} is after last_train_end {last}"),
        ));
    }
    let field = ingest_events(events)?;
    let report = coverage_stats(&field, &params, first, last)?;
    if report.rows.is_empty() {
        return Err(Error::Validation(format!(
            "history too short: coverage for train ends {first}..={last} needs months {}..={} with fatalities after each train end",
            first - params.input_window as i64 + 1,
            last + params.horizon as i64
        )));
    }
    prepare_out(&common.out)?;
    export_table(&report.rows, &common.out.join("coverage.csv"))?;
    write_manifest(
        &common.out,
        "coverage",
        &[
            ("events", events.display().to_string()),
            ("first_train_end", first.to_string()),
            ("last_train_end", last.to_string()),
        ],
        &params,
    )?;
    println!(
        "{} months reported, {} skipped -> {}",
        report.rows.len(),
        report.warnings.len(),
        common.out.display()
    );
    Ok(())
}

/// Prints the six toy distances and the ordering check.
pub fn cmd_toy_verify() -> Result<bool> {
    let report = toy_report()?;
    for c in report.checks() {
        println!(
            "{:<10} {:>10.6}  expected {} +/- {}  {}",
            c.name,
            c.value,
            c.expected,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "ordering   emd {:.4} < {:.4}, sp {:.2} > {:.2}, ed {} = {}  {}",
        report.emd_12,
        report.emd_13,
        report.sp_12,
        report.sp_13,
        report.ed_12,
        report.ed_13,
        if report.ordering_holds() { "PASS" } else { "FAIL" }
    );
    let ok = report.passed();
    println!("toy-verify: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
