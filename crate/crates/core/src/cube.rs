//! Spatio-temporal sequences and their density-cube representation.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::FatalityField;
use crate::params::CoordMode;
use crate::zones::ActiveZone;

/// Lower corner of a sequence box: first row, first column, first month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub lat: i64,
    pub lon: i64,
    pub t: i64,
}

/// Box size in cells and months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dims {
    pub lat: usize,
    pub lon: usize,
    pub time: usize,
}

impl Dims {
    pub fn new(lat: usize, lon: usize, time: usize) -> Self {
        Self { lat, lon, time }
    }

    pub fn volume(&self) -> usize {
        self.lat * self.lon * self.time
    }

    fn as_tuple(&self) -> (usize, usize, usize) {
        (self.lat, self.lon, self.time)
    }
}

/// Values over a `lat x lon x time` box, stored with time varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence3D {
    pub origin: Origin,
    pub dims: Dims,
    values: Vec<f64>,
}

impl Sequence3D {
    pub fn zeros(origin: Origin, dims: Dims) -> Self {
        assert!(dims.lat >= 1 && dims.lon >= 1 && dims.time >= 1, "empty sequence dims");
        Self {
            origin,
            dims,
            values: vec![0.0; dims.volume()],
        }
    }

    pub fn from_fn(origin: Origin, dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut seq = Self::zeros(origin, dims);
        for la in 0..dims.lat {
            for lo in 0..dims.lon {
                for t in 0..dims.time {
                    let v = f(la, lo, t);
                    seq.set(la, lo, t, v);
                }
            }
        }
        seq
    }

    /// Builds from a `[time][lat][lon]` nested layout.
    pub fn from_month_grids(origin: Origin, grids: &[Vec<Vec<f64>>]) -> Self {
        let time = grids.len();
        let lat = grids[0].len();
        let lon = grids[0][0].len();
        Self::from_fn(origin, Dims::new(lat, lon, time), |la, lo, t| grids[t][la][lo])
    }

    #[inline]
    fn idx(&self, la: usize, lo: usize, t: usize) -> usize {
        (la * self.dims.lon + lo) * self.dims.time + t
    }

    #[inline]
    pub fn get(&self, la: usize, lo: usize, t: usize) -> f64 {
        self.values[self.idx(la, lo, t)]
    }

    #[inline]
    pub fn set(&mut self, la: usize, lo: usize, t: usize, v: f64) {
        let i = self.idx(la, lo, t);
        self.values[i] = v;
    }

    #[inline]
    pub fn add(&mut self, la: usize, lo: usize, t: usize, v: f64) {
        let i = self.idx(la, lo, t);
        self.values[i] += v;
    }

    /// Raw values, time fastest, then lon, then lat.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn n_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `(la, lo, t, value)` for every cell in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let (nlo, nt) = (self.dims.lon, self.dims.time);
        self.values.iter().enumerate().map(move |(i, &v)| {
            let t = i % nt;
            let lo = (i / nt) % nlo;
            let la = i / (nt * nlo);
            (la, lo, t, v)
        })
    }

    /// `k` quarter-turns of the spatial plane on the lattice, matching
    /// [`rotate90`] on the normalized cube: one turn sends lon index `lo` to
    /// lat index `W_lon - 1 - lo` and lat index `la` to lon index `la`.
    pub fn rotated(&self, k: u8) -> Sequence3D {
        let mut out = self.clone();
        for _ in 0..(k % 4) {
            let d = out.dims;
            let turned_dims = Dims::new(d.lon, d.lat, d.time);
            let mut next = Sequence3D::zeros(out.origin, turned_dims);
            for (la, lo, t, v) in out.iter() {
                next.set(d.lon - 1 - lo, la, t, v);
            }
            out = next;
        }
        out
    }

    pub fn check_same_shape(&self, other: &Sequence3D) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                left: self.dims.as_tuple(),
                right: other.dims.as_tuple(),
            });
        }
        Ok(())
    }
}

/// Copies the box `origin + dims` out of the field; cells outside the field
/// read as zero.
pub fn extract_box(field: &FatalityField, origin: Origin, dims: Dims) -> Sequence3D {
    let mut seq = Sequence3D::zeros(origin, dims);
    let lat_hi = origin.lat + dims.lat as i64 - 1;
    let lon_hi = origin.lon + dims.lon as i64 - 1;
    let t_hi = origin.t + dims.time as i64 - 1;
    for (key, v) in field.iter() {
        if (origin.lat..=lat_hi).contains(&key.lat)
            && (origin.lon..=lon_hi).contains(&key.lon)
            && (origin.t..=t_hi).contains(&key.month)
        {
            seq.set(
                (key.lat - origin.lat) as usize,
                (key.lon - origin.lon) as usize,
                (key.month - origin.t) as usize,
                v as f64,
            );
        }
    }
    seq
}

/// The zone's bounding box over months `[t_start, t_end]`.
pub fn extract_sequence(field: &FatalityField, zone: &ActiveZone, t_range: (i64, i64)) -> Result<Sequence3D> {
    let (t_start, t_end) = t_range;
    if t_start > t_end {
        return Err(Error::Validation(format!(
            "sequence month range {t_start}..={t_end} is reversed"
        )));
    }
    let origin = Origin {
        lat: zone.bbox.lat_min,
        lon: zone.bbox.lon_min,
        t: t_start,
    };
    let dims = Dims::new(zone.bbox.n_lat(), zone.bbox.n_lon(), (t_end - t_start + 1) as usize);
    Ok(extract_box(field, origin, dims))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubePoint {
    pub lon: f64,
    pub lat: f64,
    pub t: f64,
    pub weight: f64,
}

impl CubePoint {
    pub fn distance(&self, other: &CubePoint) -> f64 {
        let dx = self.lon - other.lon;
        let dy = self.lat - other.lat;
        let dt = self.t - other.t;
        (dx * dx + dy * dy + dt * dt).sqrt()
    }
}

/// Unit-mass point cloud of a sequence's non-zero cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCube {
    pub points: Vec<CubePoint>,
    pub n_active: usize,
    pub source_dims: Dims,
    /// Largest lon coordinate the rotation reflects around (1 when normalized).
    pub span_lon: f64,
    pub span_lat: f64,
}

impl DensityCube {
    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    /// Weighted mean position `(lon, lat, t)`.
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            c[0] += p.weight * p.lon;
            c[1] += p.weight * p.lat;
            c[2] += p.weight * p.t;
        }
        c
    }

    /// Writes `u_lon,u_lat,u_t,weight` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["u_lon", "u_lat", "u_t", "weight"])?;
        for p in &self.points {
            wtr.write_record([
                p.lon.to_string(),
                p.lat.to_string(),
                p.t.to_string(),
                p.weight.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn axis_coord(index: usize, size: usize, mode: CoordMode) -> f64 {
    match mode {
        CoordMode::Raw => index as f64,
        CoordMode::Normalized if size <= 1 => 0.0,
        CoordMode::Normalized => index as f64 / (size - 1) as f64,
    }
}

pub fn to_density_cube(seq: &Sequence3D) -> Result<DensityCube> {
    to_density_cube_with(seq, CoordMode::Normalized)
}

/// Converts non-zero cells to points with mass proportional to their value.
pub fn to_density_cube_with(seq: &Sequence3D, mode: CoordMode) -> Result<DensityCube> {
    if seq.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Validation(
            "sequence values must be finite and non-negative".into(),
        ));
    }
    let total = seq.total();
    if total <= 0.0 {
        return Err(Error::Degenerate("all-zero sequence has no mass to normalize".into()));
    }
    let d = seq.dims;
    let points: Vec<CubePoint> = seq
        .iter()
        .filter(|&(_, _, _, v)| v > 0.0)
        .map(|(la, lo, t, v)| CubePoint {
            lon: axis_coord(lo, d.lon, mode),
            lat: axis_coord(la, d.lat, mode),
            t: axis_coord(t, d.time, mode),
            weight: v / total,
        })
        .collect();
    let (span_lon, span_lat) = match mode {
        CoordMode::Normalized => (1.0, 1.0),
        CoordMode::Raw => ((d.lon - 1) as f64, (d.lat - 1) as f64),
    };
    Ok(DensityCube {
        n_active: points.len(),
        points,
        source_dims: d,
        span_lon,
        span_lat,
    })
}

/// `k` quarter-turns about the time axis. One turn maps
/// `(lon, lat) -> (lat, span_lon - lon)`; time and weights are unchanged.
pub fn rotate90(cube: &DensityCube, k: u8) -> DensityCube {
    let mut out = cube.clone();
    for _ in 0..(k % 4) {
        for p in &mut out.points {
            let (lon, lat) = (p.lon, p.lat);
            p.lon = lat;
            p.lat = out.span_lon - lon;
        }
        std::mem::swap(&mut out.span_lon, &mut out.span_lat);
        out.source_dims = Dims::new(out.source_dims.lon, out.source_dims.lat, out.source_dims.time);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellKey;
    use proptest::prelude::*;

    fn origin() -> Origin {
        Origin { lat: 0, lon: 0, t: 0 }
    }

    #[test]
    fn zero_field_gives_zero_sequence() {
        let zone = ActiveZone::new(0, [(0, 0), (0, 1)].into_iter().collect());
        let seq = extract_sequence(&FatalityField::empty(), &zone, (0, 1)).unwrap();
        assert_eq!(seq.dims, Dims::new(1, 2, 2));
        assert!(seq.is_all_zero());
    }

    #[test]
    fn extraction_copies_origin_value() {
        let field = FatalityField::from_rows([(CellKey::new(4, 3, 10), 7), (CellKey::new(5, 3, 10), 1)]);
        let zone = ActiveZone::new(0, [(3, 4), (3, 5)].into_iter().collect());
        let seq = extract_sequence(&field, &zone, (10, 12)).unwrap();
        assert_eq!(seq.get(0, 0, 0), 7.0);
        assert_eq!(seq.get(0, 1, 0), 1.0);
        assert!(extract_sequence(&field, &zone, (3, 2)).is_err());
    }

    #[test]
    fn single_cell_cube() {
        let mut seq = Sequence3D::zeros(origin(), Dims::new(2, 2, 2));
        seq.set(1, 0, 1, 5.0);
        let cube = to_density_cube(&seq).unwrap();
        assert_eq!(cube.points.len(), 1);
        assert_eq!(cube.points[0].weight, 1.0);
        assert_eq!(
            (cube.points[0].lon, cube.points[0].lat, cube.points[0].t),
            (0.0, 1.0, 1.0)
        );
    }

    #[test]
    fn weights_are_ratios() {
        let mut seq = Sequence3D::zeros(origin(), Dims::new(1, 2, 1));
        seq.set(0, 0, 0, 1.0);
        seq.set(0, 1, 0, 3.0);
        let cube = to_density_cube(&seq).unwrap();
        let w: Vec<f64> = cube.points.iter().map(|p| p.weight).collect();
        assert_eq!(w, vec![0.25, 0.75]);
        assert_eq!(cube.n_active, 2);
        // Degenerate lat and time axes collapse to 0.
        assert_eq!(cube.points[1].lat, 0.0);
        assert_eq!(cube.points[1].lon, 1.0);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let seq = Sequence3D::zeros(origin(), Dims::new(2, 2, 2));
        assert!(matches!(to_density_cube(&seq), Err(Error::Degenerate(_))));
    }

    #[test]
    fn toy_pattern_first_weight() {
        let p1 = crate::toy::pattern(1);
        let cube = to_density_cube(&p1).unwrap();
        // Points are listed lat-major; the worked example lists month-major. The
        // first worked-example point is month 0, row 0, col 1 with value 1 of 212.
        let p = cube
            .points
            .iter()
            .find(|p| p.t == 0.0 && p.lat == 0.0 && p.lon == 0.25)
            .unwrap();
        assert!((p.weight - 0.0047).abs() < 5e-5);
        assert!((p.weight - 1.0 / 212.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_identity_and_corner() {
        let mut seq = Sequence3D::zeros(origin(), Dims::new(3, 3, 2));
        seq.set(0, 0, 0, 1.0);
        seq.set(2, 1, 1, 2.0);
        let cube = to_density_cube(&seq).unwrap();
        assert_eq!(rotate90(&cube, 0), cube);
        let turned = rotate90(&cube, 1);
        // (lon, lat) = (0, 0) -> (0, 1)
        assert_eq!((turned.points[0].lon, turned.points[0].lat), (0.0, 1.0));
        let back = rotate90(&rotate90(&rotate90(&turned, 1), 1), 1);
        for (a, b) in back.points.iter().zip(&cube.points) {
            assert!((a.lon - b.lon).abs() < 1e-12 && (a.lat - b.lat).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_rotation_matches_cube_rotation() {
        let seq = Sequence3D::from_fn(origin(), Dims::new(2, 4, 3), |la, lo, t| {
            ((la * 7 + lo * 3 + t) % 5) as f64
        });
        for k in 0..4u8 {
            let via_cube = rotate90(&to_density_cube(&seq).unwrap(), k);
            let via_lattice = to_density_cube(&seq.rotated(k)).unwrap();
            let mut a: Vec<(i64, i64, i64, i64)> = via_cube
                .points
                .iter()
                .map(|p| {
                    (
                        (p.lon * 1e9).round() as i64,
                        (p.lat * 1e9).round() as i64,
                        (p.t * 1e9).round() as i64,
                        (p.weight * 1e12).round() as i64,
                    )
                })
                .collect();
            let mut b: Vec<(i64, i64, i64, i64)> = via_lattice
                .points
                .iter()
                .map(|p| {
                    (
                        (p.lon * 1e9).round() as i64,
                        (p.lat * 1e9).round() as i64,
                        (p.t * 1e9).round() as i64,
                        (p.weight * 1e12).round() as i64,
                    )
                })
                .collect();
            a.sort();
            b.sort();
            assert_eq!(a, b, "rotation {k}");
        }
    }

    #[test]
    fn raw_rotation_stays_on_lattice() {
        let mut seq = Sequence3D::zeros(origin(), Dims::new(2, 3, 1));
        seq.set(0, 2, 0, 1.0);
        let cube = to_density_cube_with(&seq, CoordMode::Raw).unwrap();
        let turned = rotate90(&cube, 1);
        assert_eq!((turned.points[0].lon, turned.points[0].lat), (0.0, 0.0));
        assert_eq!(turned.source_dims, Dims::new(3, 2, 1));
    }

    #[test]
    fn cube_csv_dump() {
        let mut seq = Sequence3D::zeros(origin(), Dims::new(1, 1, 1));
        seq.set(0, 0, 0, 2.0);
        let mut buf = Vec::new();
        to_density_cube(&seq).unwrap().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "u_lon,u_lat,u_t,weight\n0,0,0,1\n");
    }

    fn arb_seq() -> impl Strategy<Value = Sequence3D> {
        (1usize..5, 1usize..5, 1usize..6)
            .prop_flat_map(|(a, b, c)| {
                prop::collection::vec(prop_oneof![3 => Just(0u32), 2 => 1u32..50], a * b * c)
                    .prop_map(move |v| (a, b, c, v))
            })
            .prop_filter("needs mass", |(_, _, _, v)| v.iter().any(|&x| x > 0))
            .prop_map(|(a, b, c, v)| {
                let mut it = v.into_iter();
                Sequence3D::from_fn(Origin { lat: 0, lon: 0, t: 0 }, Dims::new(a, b, c), |_, _, _| {
                    it.next().unwrap() as f64
                })
            })
    }

    proptest! {
        #[test]
        fn cube_mass_and_bounds(seq in arb_seq()) {
            let cube = to_density_cube(&seq).unwrap();
            prop_assert!((cube.total_weight() - 1.0).abs() < 1e-9);
            prop_assert_eq!(cube.n_active, seq.n_nonzero());
            for k in 0..4u8 {
                let r = rotate90(&cube, k);
                prop_assert_eq!(r.n_active, cube.n_active);
                for (p, q) in r.points.iter().zip(&cube.points) {
                    prop_assert!((0.0..=1.0).contains(&p.lon) && (0.0..=1.0).contains(&p.lat) && (0.0..=1.0).contains(&p.t));
                    prop_assert_eq!(p.weight, q.weight);
                    prop_assert_eq!(p.t, q.t);
                }
                for i in 0..r.points.len() {
                    for j in 0..r.points.len() {
                        let d0 = cube.points[i].distance(&cube.points[j]);
                        let d1 = r.points[i].distance(&r.points[j]);
                        prop_assert!((d0 - d1).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
