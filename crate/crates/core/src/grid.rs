//! Cell-month fatality storage and the CSV tables the engine reads and writes.
//!
//! Grid indices are dataset-local integers: `lon` is the grid column, `lat`
//! the grid row, and `month` a single global month counter.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const EVENT_HEADER: [&str; 4] = ["lon", "lat", "month", "fatalities"];
pub const FORECAST_HEADER: [&str; 5] = ["zone_id", "lon", "lat", "month", "pred"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub lon: i64,
    pub lat: i64,
    pub month: i64,
}

impl CellKey {
    pub fn new(lon: i64, lat: i64, month: i64) -> Self {
        Self { lon, lat, month }
    }
}

/// Inclusive bounding box of a non-empty field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub lon_min: i64,
    pub lon_max: i64,
    pub lat_min: i64,
    pub lat_max: i64,
    pub month_min: i64,
    pub month_max: i64,
}

impl Bounds {
    fn of(key: CellKey) -> Self {
        Self {
            lon_min: key.lon,
            lon_max: key.lon,
            lat_min: key.lat,
            lat_max: key.lat,
            month_min: key.month,
            month_max: key.month,
        }
    }

    fn include(&mut self, key: CellKey) {
        self.lon_min = self.lon_min.min(key.lon);
        self.lon_max = self.lon_max.max(key.lon);
        self.lat_min = self.lat_min.min(key.lat);
        self.lat_max = self.lat_max.max(key.lat);
        self.month_min = self.month_min.min(key.month);
        self.month_max = self.month_max.max(key.month);
    }

    pub fn contains(&self, key: CellKey) -> bool {
        (self.lon_min..=self.lon_max).contains(&key.lon)
            && (self.lat_min..=self.lat_max).contains(&key.lat)
            && (self.month_min..=self.month_max).contains(&key.month)
    }

    pub fn n_lon(&self) -> usize {
        (self.lon_max - self.lon_min + 1) as usize
    }

    pub fn n_lat(&self) -> usize {
        (self.lat_max - self.lat_min + 1) as usize
    }

    pub fn n_months(&self) -> usize {
        (self.month_max - self.month_min + 1) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Empty,
    Bounded(Bounds),
}

impl Extent {
    pub fn bounds(&self) -> Option<&Bounds> {
        match self {
            Extent::Empty => None,
            Extent::Bounded(b) => Some(b),
        }
    }
}

/// Sparse fatality counts over (lon, lat, month). Zero counts are not stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FatalityField {
    cells: BTreeMap<CellKey, u64>,
    extent: Extent,
}

impl Default for FatalityField {
    fn default() -> Self {
        Self::empty()
    }
}

impl FatalityField {
    pub fn empty() -> Self {
        Self {
            cells: BTreeMap::new(),
            extent: Extent::Empty,
        }
    }

    /// Builds a field from raw rows. Duplicate keys are summed; zero-valued
    /// rows still widen the extent.
    pub fn from_rows<I>(rows: I) -> Self
    where
        I: IntoIterator<Item = (CellKey, u64)>,
    {
        let mut cells = BTreeMap::new();
        let mut extent = Extent::Empty;
        for (key, value) in rows {
            match &mut extent {
                Extent::Empty => extent = Extent::Bounded(Bounds::of(key)),
                Extent::Bounded(b) => b.include(key),
            }
            if value > 0 {
                *cells.entry(key).or_insert(0) += value;
            }
        }
        Self { cells, extent }
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn get(&self, lon: i64, lat: i64, month: i64) -> u64 {
        self.cells.get(&CellKey::new(lon, lat, month)).copied().unwrap_or(0)
    }

    /// Non-zero entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (CellKey, u64)> + '_ {
        self.cells.iter().map(|(k, v)| (*k, *v))
    }

    pub fn n_nonzero(&self) -> usize {
        self.cells.len()
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    /// Cell-wise sum of two fields over the union of their extents.
    pub fn combined(&self, other: &FatalityField) -> FatalityField {
        let mut rows: Vec<(CellKey, u64)> = self.iter().chain(other.iter()).collect();
        for extent in [self.extent, other.extent] {
            if let Extent::Bounded(b) = extent {
                rows.push((CellKey::new(b.lon_min, b.lat_min, b.month_min), 0));
                rows.push((CellKey::new(b.lon_max, b.lat_max, b.month_max), 0));
            }
        }
        FatalityField::from_rows(rows)
    }

    /// Copy restricted to months `<= last_month`, keeping the spatial extent.
    pub fn truncated(&self, last_month: i64) -> FatalityField {
        let Some(b) = self.extent.bounds() else {
            return FatalityField::empty();
        };
        if last_month < b.month_min {
            return FatalityField::empty();
        }
        let mut rows: Vec<(CellKey, u64)> = self.iter().filter(|(k, _)| k.month <= last_month).collect();
        rows.push((CellKey::new(b.lon_min, b.lat_min, b.month_min), 0));
        rows.push((CellKey::new(b.lon_max, b.lat_max, last_month.min(b.month_max)), 0));
        FatalityField::from_rows(rows)
    }
}

/// Per-cell sums over a month window, covering the field's spatial extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatedGrid {
    pub window: (i64, i64),
    pub lat_min: i64,
    pub lon_min: i64,
    pub n_lat: usize,
    pub n_lon: usize,
    sums: Vec<u64>,
}

impl AggregatedGrid {
    pub fn zeros(window: (i64, i64), lat_min: i64, lon_min: i64, n_lat: usize, n_lon: usize) -> Self {
        Self {
            window,
            lat_min,
            lon_min,
            n_lat,
            n_lon,
            sums: vec![0; n_lat * n_lon],
        }
    }

    fn index(&self, lat: i64, lon: i64) -> Option<usize> {
        let r = lat - self.lat_min;
        let c = lon - self.lon_min;
        if r < 0 || c < 0 || r as usize >= self.n_lat || c as usize >= self.n_lon {
            return None;
        }
        Some(r as usize * self.n_lon + c as usize)
    }

    /// Sum at absolute `(lat, lon)`; zero outside the grid.
    pub fn get(&self, lat: i64, lon: i64) -> u64 {
        self.index(lat, lon).map_or(0, |i| self.sums[i])
    }

    pub fn set(&mut self, lat: i64, lon: i64, value: u64) {
        let i = self.index(lat, lon).expect("cell outside aggregated grid extent");
        self.sums[i] = value;
    }

    /// Row-major `(lat, lon, sum)` over every grid cell.
    pub fn iter(&self) -> impl Iterator<Item = (i64, i64, u64)> + '_ {
        self.sums.iter().enumerate().map(move |(i, &v)| {
            let r = (i / self.n_lon.max(1)) as i64;
            let c = (i % self.n_lon.max(1)) as i64;
            (self.lat_min + r, self.lon_min + c, v)
        })
    }

    pub fn total(&self) -> u64 {
        self.sums.iter().sum()
    }
}

/// Sums `field` over months `[t_start, t_end]` for every cell of its extent.
pub fn aggregate(field: &FatalityField, t_start: i64, t_end: i64) -> Result<AggregatedGrid> {
    if t_start > t_end {
        return Err(Error::Validation(format!(
            "aggregation window start {t_start} is after end {t_end}"
        )));
    }
    let Some(b) = field.extent().bounds().copied() else {
        return Ok(AggregatedGrid::zeros((t_start, t_end), 0, 0, 0, 0));
    };
    let mut grid = AggregatedGrid::zeros((t_start, t_end), b.lat_min, b.lon_min, b.n_lat(), b.n_lon());
    for (key, value) in field.iter() {
        if (t_start..=t_end).contains(&key.month) {
            let i = grid.index(key.lat, key.lon).expect("key within extent");
            grid.sums[i] += value;
        }
    }
    Ok(grid)
}

fn parse_int(field: &str, column: &str, path: &Path, line: u64) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column `{column}`: cannot parse `{field}` as integer ({e})"),
    })
}

fn check_header(headers: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Reads an event table (`lon,lat,month,fatalities`) from any reader.
pub fn read_events<R: Read>(reader: R, source: &Path) -> Result<FatalityField> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &EVENT_HEADER, source)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: source.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line,
                message: format!("expected 4 columns, found {}", record.len()),
            });
        }
        let lon = parse_int(&record[0], "lon", source, line)?;
        let lat = parse_int(&record[1], "lat", source, line)?;
        let month = parse_int(&record[2], "month", source, line)?;
        let fatalities = parse_int(&record[3], "fatalities", source, line)?;
        if fatalities < 0 {
            return Err(Error::Validation(format!(
                "{}: line {line}: negative fatalities {fatalities}",
                source.display()
            )));
        }
        rows.push((CellKey::new(lon, lat, month), fatalities as u64));
    }
    Ok(FatalityField::from_rows(rows))
}

pub fn ingest_events(path: &Path) -> Result<FatalityField> {
    let file = File::open(path)?;
    read_events(file, path)
}

/// Writes a field back out as an event table, in key order.
pub fn write_events(field: &FatalityField, path: &Path) -> Result<()> {
    let rows: Vec<EventRecord> = field
        .iter()
        .map(|(k, v)| EventRecord {
            lon: k.lon,
            lat: k.lat,
            month: k.month,
            fatalities: v,
        })
        .collect();
    export_table(&rows, path)
}

/// A record type with a fixed CSV header and a canonical row order.
pub trait TableRow {
    type Key: Ord;

    fn header() -> &'static [&'static str];
    fn key(&self) -> Self::Key;
    fn cells(&self) -> Vec<String>;
}

/// Writes rows sorted by their canonical key. Output is byte-deterministic.
pub fn export_table<T: TableRow>(rows: &[T], path: &Path) -> Result<()> {
    let mut file = File::create(path)?;
    write_table(rows, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_table<T: TableRow, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut order: Vec<&T> = rows.iter().collect();
    order.sort_by_key(|r| r.key());
    let mut wtr = csv::WriterBuilder::new().from_writer(out);
    wtr.write_record(T::header())?;
    for row in order {
        wtr.write_record(row.cells())?;
    }
    wtr.flush()?;
    Ok(())
}

/// Renders a non-negative prediction with at most six fractional digits.
pub fn format_decimal(value: f64) -> String {
    let mut s = format!("{:.6}", value);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub lon: i64,
    pub lat: i64,
    pub month: i64,
    pub fatalities: u64,
}

impl TableRow for EventRecord {
    type Key = (i64, i64, i64);

    fn header() -> &'static [&'static str] {
        &EVENT_HEADER
    }

    fn key(&self) -> Self::Key {
        (self.month, self.lat, self.lon)
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.lon.to_string(),
            self.lat.to_string(),
            self.month.to_string(),
            self.fatalities.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRecord {
    pub zone_id: usize,
    pub lon: i64,
    pub lat: i64,
    pub month: i64,
    pub pred: f64,
}

impl ForecastRecord {
    /// The prediction as it will read back after a write.
    pub fn quantized(mut self) -> Self {
        self.pred = format_decimal(self.pred).parse().expect("formatted decimal");
        self
    }
}

impl TableRow for ForecastRecord {
    type Key = (usize, i64, i64, i64);

    fn header() -> &'static [&'static str] {
        &FORECAST_HEADER
    }

    fn key(&self) -> Self::Key {
        (self.zone_id, self.month, self.lat, self.lon)
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.zone_id.to_string(),
            self.lon.to_string(),
            self.lat.to_string(),
            self.month.to_string(),
            format_decimal(self.pred),
        ]
    }
}

pub fn read_forecast_table(path: &Path) -> Result<Vec<ForecastRecord>> {
    let file = File::open(path)?;
    read_forecasts(file, path)
}

pub fn read_forecasts<R: Read>(reader: R, source: &Path) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, &FORECAST_HEADER, source)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line,
                message: format!("expected 5 columns, found {}", record.len()),
            });
        }
        let zone_id = parse_int(&record[0], "zone_id", source, line)?;
        if zone_id < 0 {
            return Err(Error::Validation(format!(
                "{}: line {line}: negative zone_id",
                source.display()
            )));
        }
        let pred: f64 = record[4].trim().parse().map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            line,
            message: format!("column `pred`: {e}"),
        })?;
        if !(pred.is_finite() && pred >= 0.0) {
            return Err(Error::Validation(format!(
                "{}: line {line}: prediction must be a non-negative number, got {pred}",
                source.display()
            )));
        }
        out.push(ForecastRecord {
            zone_id: zone_id as usize,
            lon: parse_int(&record[1], "lon", source, line)?,
            lat: parse_int(&record[2], "lat", source, line)?,
            month: parse_int(&record[3], "month", source, line)?,
            pred,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<FatalityField> {
        read_events(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn header_only_is_empty() {
        let field = parse("lon,lat,month,fatalities\n").unwrap();
        assert_eq!(field.extent(), Extent::Empty);
        assert_eq!(field.n_nonzero(), 0);
    }

    #[test]
    fn duplicates_are_summed() {
        let field = parse("lon,lat,month,fatalities\n0,0,0,5\n0,0,0,3\n").unwrap();
        assert_eq!(field.get(0, 0, 0), 5 + 3);
        assert_eq!(field.n_nonzero(), 1);
    }

    #[test]
    fn single_row_extent() {
        let field = parse("lon,lat,month,fatalities\n2,4,3,7\n").unwrap();
        assert_eq!(
            field.extent(),
            Extent::Bounded(Bounds {
                lon_min: 2,
                lon_max: 2,
                lat_min: 4,
                lat_max: 4,
                month_min: 3,
                month_max: 3
            })
        );
        assert_eq!(field.get(2, 4, 3), 7);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("lon,lat,month,fatalities\n0,0,0,1\n0,x,0,1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn negative_fatalities_rejected() {
        let err = parse("lon,lat,month,fatalities\n0,0,0,-1\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(parse("x,y,t,f\n0,0,0,1\n").is_err());
    }

    #[test]
    fn aggregate_adds_window() {
        let field = FatalityField::from_rows([(CellKey::new(0, 0, 0), 2), (CellKey::new(0, 0, 1), 3)]);
        let grid = aggregate(&field, 0, 1).unwrap();
        assert_eq!(grid.get(0, 0), 2 + 3);
    }

    #[test]
    fn aggregate_single_month() {
        let field = FatalityField::from_rows([(CellKey::new(0, 0, 0), 0), (CellKey::new(1, 1, 5), 4)]);
        let grid = aggregate(&field, 5, 5).unwrap();
        assert_eq!(grid.get(1, 1), 4);
        assert_eq!(grid.total(), 4);
    }

    #[test]
    fn aggregate_all_zero() {
        let field = FatalityField::from_rows([(CellKey::new(0, 0, 0), 0), (CellKey::new(3, 3, 3), 0)]);
        let grid = aggregate(&field, 0, 3).unwrap();
        assert_eq!(grid.n_lat, 4);
        assert!(grid.iter().all(|(_, _, v)| v == 0));
    }

    #[test]
    fn aggregate_outside_extent_is_zero() {
        let field = FatalityField::from_rows([(CellKey::new(0, 0, 0), 9)]);
        let grid = aggregate(&field, 100, 111).unwrap();
        assert_eq!(grid.total(), 0);
        assert!(aggregate(&field, 2, 1).is_err());
    }

    #[test]
    fn export_empty_is_header_only() {
        let mut buf = Vec::new();
        write_table::<ForecastRecord, _>(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "zone_id,lon,lat,month,pred\n");
    }

    #[test]
    fn export_single_record_round_trips() {
        let rec = ForecastRecord {
            zone_id: 3,
            lon: -2,
            lat: 7,
            month: 400,
            pred: 1.25,
        };
        let mut buf = Vec::new();
        write_table(&[rec], &mut buf).unwrap();
        let back = read_forecasts(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn export_sorts_records() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut records = Vec::new();
        for zone_id in 0..2 {
            for month in 0..5 {
                for lat in 0..2 {
                    for lon in 0..5 {
                        records.push(ForecastRecord {
                            zone_id,
                            lon,
                            lat,
                            month,
                            pred: (lon + lat * 10 + month * 100) as f64,
                        });
                    }
                }
            }
        }
        let mut expected = records.clone();
        expected.sort_by_key(|r| (r.zone_id, r.month, r.lat, r.lon));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        records.shuffle(&mut rng);
        let mut buf = Vec::new();
        write_table(&records, &mut buf).unwrap();
        let back = read_forecasts(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, expected);
    }

    #[test]
    fn decimal_formatting() {
        assert_eq!(format_decimal(0.0), "0");
        assert_eq!(format_decimal(5.0), "5");
        assert_eq!(format_decimal(2.5), "2.5");
        assert_eq!(format_decimal(1.0 / 3.0), "0.333333");
        assert_eq!(format_decimal(1e-9), "0");
    }

    fn arb_field() -> impl Strategy<Value = FatalityField> {
        prop::collection::vec((0i64..4, 0i64..4, 0i64..6, 0u64..20), 1..30).prop_map(|rows| {
            FatalityField::from_rows(rows.into_iter().map(|(lon, lat, m, v)| (CellKey::new(lon, lat, m), v)))
        })
    }

    proptest! {
        #[test]
        fn aggregate_is_linear(a in arb_field(), b in arb_field(), t0 in 0i64..6, len in 0i64..6) {
            let sum = a.combined(&b);
            let t1 = t0 + len;
            let ga = aggregate(&a, t0, t1).unwrap();
            let gb = aggregate(&b, t0, t1).unwrap();
            let gs = aggregate(&sum, t0, t1).unwrap();
            for (lat, lon, v) in gs.iter() {
                prop_assert_eq!(v, ga.get(lat, lon) + gb.get(lat, lon));
            }
        }

        #[test]
        fn forecast_table_round_trip(
            rows in prop::collection::vec((0usize..5, -5i64..5, -5i64..5, 0i64..10, 0.0f64..1e5), 0..40)
        ) {
            let records: Vec<ForecastRecord> = rows
                .into_iter()
                .map(|(zone_id, lon, lat, month, pred)| ForecastRecord { zone_id, lon, lat, month, pred }.quantized())
                .collect();
            let mut buf = Vec::new();
            write_table(&records, &mut buf).unwrap();
            let back = read_forecasts(buf.as_slice(), Path::new("mem")).unwrap();
            let mut sorted = records.clone();
            sorted.sort_by_key(|r| r.key());
            prop_assert_eq!(back.len(), sorted.len());
            for (x, y) in back.iter().zip(&sorted) {
                prop_assert_eq!(x.key(), y.key());
                prop_assert_eq!(x.pred, y.pred);
            }
        }
    }
}
