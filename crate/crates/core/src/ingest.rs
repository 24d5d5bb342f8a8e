//! Order logs to regional demand tensors.
//!
//! Orders are binned by pickup time into fixed intervals and assigned to the
//! nearest region center (haversine) within the region set's cutoff radius.
//! Orders that fall outside the time range or outside every radius are
//! dropped and counted in a [`DropReport`].

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use ndarray::{Array2, Array3};

use crate::geo::haversine_km;
use crate::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
/// Number of time covariates: sin/cos of time-of-day and day-of-week.
pub const COVARIATE_DIM: usize = 4;

const DEMAND_MAGIC: &[u8; 4] = b"IDT1";

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRecord {
    pub order_id: String,
    /// UTC epoch seconds.
    pub pickup_time: i64,
    pub pickup_lat: f64,
    pub pickup_lon: f64,
}

impl OrderRecord {
    pub fn new(order_id: impl Into<String>, pickup_time: i64, lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Data(format!("coordinates out of range: ({lat}, {lon})")));
        }
        Ok(Self { order_id: order_id.into(), pickup_time, pickup_lat: lat, pickup_lon: lon })
    }
}

/// Region identifiers with their center coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub region_ids: Vec<String>,
    /// `(lat, lon)` in degrees, one per region.
    pub centers: Vec<(f64, f64)>,
    pub assignment_radius_km: f64,
}

impl RegionSet {
    pub fn new(region_ids: Vec<String>, centers: Vec<(f64, f64)>, assignment_radius_km: f64) -> Result<Self> {
        if region_ids.len() != centers.len() {
            return Err(Error::Data(format!(
                "{} region ids but {} centers",
                region_ids.len(),
                centers.len()
            )));
        }
        if !(assignment_radius_km > 0.0) {
            return Err(Error::Config("assignment radius must be positive".into()));
        }
        let mut seen = HashSet::new();
        for id in &region_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate region id {id:?}")));
            }
        }
        for &(lat, lon) in &centers {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::Data(format!("region center out of range: ({lat}, {lon})")));
            }
        }
        Ok(Self { region_ids, centers, assignment_radius_km })
    }

    pub fn len(&self) -> usize {
        self.region_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.region_ids.iter().position(|r| r == id)
    }

    /// Subset in the order given by `nodes`.
    pub fn select(&self, nodes: &[usize]) -> RegionSet {
        RegionSet {
            region_ids: nodes.iter().map(|&i| self.region_ids[i].clone()).collect(),
            centers: nodes.iter().map(|&i| self.centers[i]).collect(),
            assignment_radius_km: self.assignment_radius_km,
        }
    }
}

/// Regional demand series `N × d_x × T` with an `N × T` observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTensor {
    pub values: Array3<f64>,
    /// `true` = observed.
    pub mask: Array2<bool>,
    pub interval_seconds: u32,
    /// Start of interval 0, UTC epoch seconds.
    pub t0: i64,
}

impl DemandTensor {
    pub fn new(values: Array3<f64>, mask: Array2<bool>, interval_seconds: u32, t0: i64) -> Result<Self> {
        let (n, _, t) = values.dim();
        if mask.dim() != (n, t) {
            return Err(Error::Shape(format!("mask {:?} does not match values ({n}, {t})", mask.dim())));
        }
        if interval_seconds == 0 {
            return Err(Error::Config("interval_seconds must be positive".into()));
        }
        for ((i, _, k), v) in values.indexed_iter() {
            if mask[[i, k]] && !v.is_finite() {
                return Err(Error::Data(format!("non-finite observed value at node {i}, step {k}")));
            }
        }
        Ok(Self { values, mask, interval_seconds, t0 })
    }

    /// Fully observed tensor.
    pub fn observed(values: Array3<f64>, interval_seconds: u32, t0: i64) -> Result<Self> {
        let (n, _, t) = values.dim();
        Self::new(values, Array2::from_elem((n, t), true), interval_seconds, t0)
    }

    pub fn n_nodes(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_features(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_steps(&self) -> usize {
        self.values.dim().2
    }

    /// Start time of interval `t`.
    pub fn time_of(&self, t: usize) -> i64 {
        self.t0 + t as i64 * self.interval_seconds as i64
    }

    /// Node subset in the order given by `nodes`.
    pub fn select_nodes(&self, nodes: &[usize]) -> DemandTensor {
        let values = self.values.select(ndarray::Axis(0), nodes);
        let mask = self.mask.select(ndarray::Axis(0), nodes);
        DemandTensor { values, mask, interval_seconds: self.interval_seconds, t0: self.t0 }
    }

    /// Checks the order-count invariant: every observed value is nonnegative.
    pub fn check_counts(&self) -> Result<()> {
        for ((i, _, k), v) in self.values.indexed_iter() {
            if self.mask[[i, k]] && *v < 0.0 {
                return Err(Error::Data(format!("negative count at node {i}, step {k}")));
            }
        }
        Ok(())
    }

    /// Writes the `IDT1` binary format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (n, dx, t) = self.values.dim();
        if self.t0 < 0 {
            return Err(Error::Format("IDT1 stores t0 as u64; negative t0 not representable".into()));
        }
        w.write_all(DEMAND_MAGIC)?;
        for d in [n, dx, t] {
            w.write_all(&u32_of(d)?.to_le_bytes())?;
        }
        w.write_all(&(self.t0 as u64).to_le_bytes())?;
        w.write_all(&self.interval_seconds.to_le_bytes())?;
        let mut buf = Vec::with_capacity(n * dx * t * 4 + n * t);
        // standard layout iterates n outer, d_x middle, t inner
        for v in self.values.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for m in self.mask.iter() {
            buf.push(u8::from(*m));
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DEMAND_MAGIC {
            return Err(Error::Format("not an IDT1 demand file".into()));
        }
        let n = read_u32(&mut r)? as usize;
        let dx = read_u32(&mut r)? as usize;
        let t = read_u32(&mut r)? as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let t0 = i64::try_from(u64::from_le_bytes(b8)).map_err(|_| Error::Format("t0 overflows i64".into()))?;
        let interval = read_u32(&mut r)?;
        let mut data = vec![0u8; n * dx * t * 4];
        r.read_exact(&mut data)?;
        let values: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut mask_bytes = vec![0u8; n * t];
        r.read_exact(&mut mask_bytes)?;
        if mask_bytes.iter().any(|&b| b > 1) {
            return Err(Error::Format("mask entries must be 0 or 1".into()));
        }
        let values = Array3::from_shape_vec((n, dx, t), values).expect("sized");
        let mask = Array2::from_shape_vec((n, t), mask_bytes.into_iter().map(|b| b == 1).collect()).expect("sized");
        DemandTensor::new(values, mask, interval, t0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn u32_of(x: usize) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("dimension {x} exceeds u32")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Orders that did not contribute to the tensor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropReport {
    pub outside_time_range: usize,
    pub outside_radius: usize,
}

impl DropReport {
    pub fn total(&self) -> usize {
        self.outside_time_range + self.outside_radius
    }
}

/// Counts orders per (nearest region, interval).
pub fn aggregate_orders(
    orders: &[OrderRecord],
    regions: &RegionSet,
    interval_seconds: u32,
    t0: i64,
    n_steps: usize,
) -> Result<(DemandTensor, DropReport)> {
    if regions.is_empty() {
        return Err(Error::Config("region set is empty".into()));
    }
    if interval_seconds == 0 || n_steps == 0 {
        return Err(Error::Config("interval_seconds and T must be positive".into()));
    }
    let n = regions.len();
    let mut values = Array3::<f64>::zeros((n, 1, n_steps));
    let mut report = DropReport::default();
    let span = interval_seconds as i64 * n_steps as i64;
    for o in orders {
        let offset = o.pickup_time - t0;
        if offset < 0 || offset >= span {
            report.outside_time_range += 1;
            continue;
        }
        let t = (offset / interval_seconds as i64) as usize;
        let p = (o.pickup_lat, o.pickup_lon);
        let mut best = (f64::INFINITY, usize::MAX);
        for (k, &c) in regions.centers.iter().enumerate() {
            let d = haversine_km(p, c);
            if d < best.0 {
                best = (d, k);
            }
        }
        if best.0 > regions.assignment_radius_km {
            report.outside_radius += 1;
            continue;
        }
        values[[best.1, 0, t]] += 1.0;
    }
    Ok((DemandTensor::observed(values, interval_seconds, t0)?, report))
}

/// Time covariates, one row per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    /// `T × 4`: sin/cos time-of-day, sin/cos day-of-week.
    pub values: Array2<f64>,
}

/// Day of week with Monday = 0 for a UTC epoch timestamp.
pub fn day_of_week(ts: i64) -> i64 {
    // 1970-01-01 was a Thursday
    (ts.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7)
}

/// Seconds since UTC midnight.
pub fn seconds_of_day(ts: i64) -> i64 {
    ts.rem_euclid(SECONDS_PER_DAY)
}

pub fn build_covariates(t0: i64, n_steps: usize, interval_seconds: u32) -> Result<Covariates> {
    if n_steps == 0 {
        return Err(Error::Config("T must be positive".into()));
    }
    let mut values = Array2::zeros((n_steps, COVARIATE_DIM));
    for t in 0..n_steps {
        let ts = t0 + t as i64 * interval_seconds as i64;
        let hour = seconds_of_day(ts) as f64 / 3600.0;
        let day = day_of_week(ts) as f64;
        let (sh, ch) = (2.0 * PI * hour / 24.0).sin_cos();
        let (sd, cd) = (2.0 * PI * day / 7.0).sin_cos();
        values.row_mut(t).assign(&ndarray::arr1(&[sh, ch, sd, cd]));
    }
    Ok(Covariates { values })
}

/// Contiguous train / validation / test index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn chronological_split(n_steps: usize, ratios: (f64, f64, f64)) -> Result<Splits> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    if n_steps < 3 {
        return Err(Error::Data(format!("T = {n_steps} too short for three non-empty splits")));
    }
    // the tiny slack keeps products like 0.6 * 10 from flooring to 5
    let size = |r: f64| (r * n_steps as f64 + 1e-9).floor() as usize;
    let (n_train, n_val) = (size(a), size(b));
    if n_train == 0 || n_val == 0 || n_train + n_val >= n_steps {
        return Err(Error::Data(format!("T = {n_steps} leaves an empty split for ratios {ratios:?}")));
    }
    Ok(Splits { train: 0..n_train, val: n_train..n_train + n_val, test: n_train + n_val..n_steps })
}

pub fn parse_iso(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Reads `order_id,pickup_time,lat,lon`. The time format (integer epoch
/// seconds or ISO-8601) is detected from the first row and then required of
/// every row.
pub fn read_orders_csv<R: Read>(r: R) -> Result<Vec<OrderRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let expected = ["order_id", "pickup_time", "lat", "lon"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!("orders header must be {}", expected.join(","))));
    }
    let mut epoch_format: Option<bool> = None;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let time_field = &rec[1];
        let is_epoch = *epoch_format.get_or_insert_with(|| time_field.parse::<i64>().is_ok());
        let ts = if is_epoch {
            time_field.parse::<i64>().ok()
        } else {
            parse_iso(time_field)
        }
        .ok_or_else(|| Error::Data(format!("row {}: unparseable pickup_time {time_field:?}", line + 2)))?;
        let lat: f64 = rec[2].parse().map_err(|_| Error::Data(format!("row {}: bad lat", line + 2)))?;
        let lon: f64 = rec[3].parse().map_err(|_| Error::Data(format!("row {}: bad lon", line + 2)))?;
        out.push(OrderRecord::new(&rec[0], ts, lat, lon)?);
    }
    Ok(out)
}

/// Reads `region_id,lat,lon`.
pub fn read_regions_csv<R: Read>(r: R, assignment_radius_km: f64) -> Result<RegionSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["region_id", "lat", "lon"] {
        return Err(Error::Format("regions header must be region_id,lat,lon".into()));
    }
    let (mut ids, mut centers) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let lat: f64 = rec[1].parse().map_err(|_| Error::Data(format!("bad lat for {}", &rec[0])))?;
        let lon: f64 = rec[2].parse().map_err(|_| Error::Data(format!("bad lon for {}", &rec[0])))?;
        centers.push((lat, lon));
    }
    RegionSet::new(ids, centers, assignment_radius_km)
}

pub fn write_regions_csv<W: Write>(regions: &RegionSet, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["region_id", "lat", "lon"])?;
    for (id, (lat, lon)) in regions.region_ids.iter().zip(&regions.centers) {
        wtr.write_record([id.clone(), format!("{lat:.8}"), format!("{lon:.8}")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::offset_km;

    fn regions() -> RegionSet {
        RegionSet::new(vec!["a".into(), "b".into()], vec![(31.2, 121.4), (31.21, 121.4)], 2.0).unwrap()
    }

    #[test]
    fn two_orders_same_interval() {
        let orders = vec![
            OrderRecord::new("1", 10, 31.2001, 121.4).unwrap(),
            OrderRecord::new("2", 3000, 31.1999, 121.4001).unwrap(),
        ];
        let (d, rep) = aggregate_orders(&orders, &regions(), 3600, 0, 4).unwrap();
        assert_eq!(d.values[[0, 0, 0]], 2.0);
        assert_eq!(d.values.sum(), 2.0);
        assert_eq!(rep.total(), 0);
        assert!(d.mask.iter().all(|&m| m));
    }

    #[test]
    fn no_orders() {
        let (d, rep) = aggregate_orders(&[], &regions(), 3600, 0, 5).unwrap();
        assert_eq!(d.values.sum(), 0.0);
        assert_eq!(rep.total(), 0);
    }

    #[test]
    fn empty_region_set_is_config_error() {
        let empty = RegionSet { region_ids: vec![], centers: vec![], assignment_radius_km: 1.0 };
        assert!(matches!(aggregate_orders(&[], &empty, 60, 0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn out_of_range_orders_are_reported() {
        let orders = vec![
            OrderRecord::new("late", 3600 * 10, 31.2, 121.4).unwrap(),
            OrderRecord::new("early", -1, 31.2, 121.4).unwrap(),
            OrderRecord::new("far", 5, 40.0, 121.4).unwrap(),
        ];
        let (d, rep) = aggregate_orders(&orders, &regions(), 3600, 0, 10).unwrap();
        assert_eq!(rep, DropReport { outside_time_range: 2, outside_radius: 1 });
        assert_eq!(d.values.sum(), 0.0);
    }

    #[test]
    fn straddling_orders_match_exhaustive_assignment() {
        // two centers 1 km apart east-west, radius 0.6 km
        let c0 = (31.2, 121.4);
        let c1 = offset_km(c0, 0.0, 1.0);
        let regs = RegionSet::new(vec!["w".into(), "e".into()], vec![c0, c1], 0.6).unwrap();
        let pts = [offset_km(c0, 0.0, 0.3), offset_km(c0, 0.0, 0.7), offset_km(c0, 0.5, 0.5)];
        let orders: Vec<_> =
            pts.iter().enumerate().map(|(k, p)| OrderRecord::new(k.to_string(), 0, p.0, p.1).unwrap()).collect();
        // brute force over all (order, region) pairs
        let mut expected = [0.0; 2];
        let mut dropped = 0;
        for p in &pts {
            let d: Vec<f64> = [c0, c1].iter().map(|c| haversine_km(*p, *c)).collect();
            let k = if d[0] <= d[1] { 0 } else { 1 };
            if d[k] <= 0.6 {
                expected[k] += 1.0;
            } else {
                dropped += 1;
            }
        }
        let (t, rep) = aggregate_orders(&orders, &regs, 60, 0, 1).unwrap();
        assert_eq!([t.values[[0, 0, 0]], t.values[[1, 0, 0]]], expected);
        assert_eq!(expected, [1.0, 1.0]);
        assert_eq!(rep.outside_radius, dropped);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn covariates_phase_zero_on_monday_midnight() {
        // 2024-01-01 00:00 UTC is a Monday
        let t0 = 1_704_067_200;
        assert_eq!(day_of_week(t0), 0);
        let c = build_covariates(t0, 30, 3600).unwrap();
        let r0 = c.values.row(0);
        assert!(r0[0].abs() < 1e-15 && (r0[1] - 1.0).abs() < 1e-15);
        assert!(r0[2].abs() < 1e-15 && (r0[3] - 1.0).abs() < 1e-15);
        let r6 = c.values.row(6);
        assert!((r6[0] - 1.0).abs() < 1e-12 && r6[1].abs() < 1e-12);
        assert!(c.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        for k in 0..2 {
            assert!((c.values[[1, k]] - c.values[[25, k]]).abs() < 1e-12);
        }
    }

    #[test]
    fn covariates_match_direct_evaluation() {
        let t0 = 1_700_000_123;
        let c = build_covariates(t0, 50, 1800).unwrap();
        for t in 0..50 {
            let ts = t0 + 1800 * t as i64;
            let secs = ((ts % 86400) + 86400) % 86400;
            let h = secs as f64 / 3600.0;
            // 1970-01-05 was a Monday
            let d = (((ts - 4 * 86400).div_euclid(86400)) % 7) as f64;
            let row = [
                (2.0 * PI * h / 24.0).sin(),
                (2.0 * PI * h / 24.0).cos(),
                (2.0 * PI * d / 7.0).sin(),
                (2.0 * PI * d / 7.0).cos(),
            ];
            for k in 0..4 {
                assert!((c.values[[t, k]] - row[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn splits() {
        let s = chronological_split(10, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..6, 6..8, 8..10));
        let s = chronological_split(11, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..6, 6..8, 8..11));
        let s = chronological_split(1000, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (600, 200, 200));
        assert!(chronological_split(2, (0.6, 0.2, 0.2)).is_err());
        assert!(chronological_split(10, (0.6, 0.2, 0.3)).is_err());
    }

    #[test]
    fn orders_csv_epoch_and_iso() {
        let epoch = "order_id,pickup_time,lat,lon\na,100,31.2,121.4\nb,200,31.3,121.5\n";
        let o = read_orders_csv(epoch.as_bytes()).unwrap();
        assert_eq!(o[1].pickup_time, 200);
        let iso = "order_id,pickup_time,lat,lon\na,2024-01-01T00:00:10Z,31.2,121.4\nb,2024-01-01 01:00:00,31.2,121.4\n";
        let o = read_orders_csv(iso.as_bytes()).unwrap();
        assert_eq!(o[0].pickup_time, 1_704_067_210);
        assert_eq!(o[1].pickup_time, 1_704_070_800);
        // format is fixed by the first row
        let mixed = "order_id,pickup_time,lat,lon\na,100,31.2,121.4\nb,2024-01-01T00:00:00Z,31.2,121.4\n";
        assert!(matches!(read_orders_csv(mixed.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn regions_csv_round_trip() {
        let r = regions();
        let mut buf = Vec::new();
        write_regions_csv(&r, &mut buf).unwrap();
        let back = read_regions_csv(buf.as_slice(), 2.0).unwrap();
        assert_eq!(back.region_ids, r.region_ids);
        assert!(RegionSet::new(vec!["x".into(), "x".into()], vec![(0.0, 0.0); 2], 1.0).is_err());
    }

    #[test]
    fn idt1_layout() {
        let mut v = Array3::zeros((2, 1, 3));
        v[[1, 0, 2]] = 7.0;
        let mut m = Array2::from_elem((2, 3), true);
        m[[0, 1]] = false;
        let d = DemandTensor::new(v, m, 3600, 1_704_067_200).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"IDT1");
        assert_eq!(buf.len(), 4 + 12 + 8 + 4 + 6 * 4 + 6);
        // last value of the f32 block is node 1, t 2
        let off = 28 + 5 * 4;
        assert_eq!(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()), 7.0);
        assert_eq!(buf[28 + 24 + 1], 0);
        let back = DemandTensor::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert!(DemandTensor::read_from(&b"XXXX"[..]).is_err());
    }
}
