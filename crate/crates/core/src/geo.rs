//! Great-circle geometry, the 50 m cell registry, and an exact radius index.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::table::{Table, TableWriter};

/// Mean Earth radius (IUGG) in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Kilometres per degree of arc on the reference sphere.
pub const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite coordinate ({}, {})",
                self.lat, self.lon
            )));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::invalid(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::invalid(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        Ok(())
    }
}

/// Great-circle distance in km on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_unchecked(a, b))
}

#[inline]
pub(crate) fn haversine_unchecked(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Identifier of one 50 m x 50 m grid cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(String);

impl CellId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("empty cell id"));
        }
        Ok(CellId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Cell id to centroid lookup.
#[derive(Debug, Clone, Default)]
pub struct CellRegistry {
    entries: BTreeMap<CellId, GeoPoint>,
}

impl CellRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: CellId, centroid: GeoPoint) -> Result<()> {
        centroid.validate()?;
        if self.entries.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate cell id `{id}`")));
        }
        self.entries.insert(id, centroid);
        Ok(())
    }

    pub fn get(&self, id: &CellId) -> Result<GeoPoint> {
        self.entries
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingKey(id.to_string()))
    }

    pub fn contains(&self, id: &CellId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellId, &GeoPoint)> {
        self.entries.iter()
    }

    /// Straight-line distance between the centroids of two cells.
    pub fn cell_distance_km(&self, i: &CellId, j: &CellId) -> Result<f64> {
        let a = self.get(i)?;
        let b = self.get(j)?;
        if i == j {
            return Ok(0.0);
        }
        Ok(haversine_unchecked(a, b))
    }

    /// Reads `cell_id,lat,lon`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = Table::read(path, &["cell_id", "lat", "lon"])?;
        let mut reg = CellRegistry::new();
        for row in table.rows() {
            let id = CellId(row.str("cell_id")?.to_string());
            let p = GeoPoint {
                lat: row.float("lat")?,
                lon: row.float("lon")?,
            };
            if let Err(e) = p.validate() {
                return Err(row.error("lat", e.to_string()));
            }
            if reg.entries.insert(id.clone(), p).is_some() {
                return Err(row.error("cell_id", format!("duplicate cell id `{id}`")));
            }
        }
        Ok(reg)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = TableWriter::create(path, &["cell_id", "lat", "lon"])?;
        for (id, p) in &self.entries {
            w.row([id.as_str().to_string(), p.lat.to_string(), p.lon.to_string()])?;
        }
        w.finish()
    }
}

/// Grid-hash index over a fixed point set answering exact radius queries.
///
/// Candidate bins are chosen from a conservative lat/lon bounding box of the
/// query circle; every candidate is then checked with the haversine distance,
/// so results are identical to an exhaustive scan.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<GeoPoint>,
    lat_bin_deg: f64,
    lon_bin_deg: f64,
    n_lon_bins: i64,
    bins: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialIndex {
    /// Builds an index with bins roughly `bin_km` on a side (at the equator).
    pub fn build(points: Vec<GeoPoint>, bin_km: f64) -> Result<Self> {
        require_positive("bin_km", bin_km)?;
        for p in &points {
            p.validate()?;
        }
        let lat_bin_deg = (bin_km / KM_PER_DEGREE).min(180.0);
        let n_lon_bins = (360.0 / lat_bin_deg).ceil().max(1.0) as i64;
        let lon_bin_deg = 360.0 / n_lon_bins as f64;
        let mut index = SpatialIndex {
            points,
            lat_bin_deg,
            lon_bin_deg,
            n_lon_bins,
            bins: HashMap::new(),
        };
        for (i, p) in index.points.iter().enumerate() {
            let key = (index.lat_bin(p.lat), index.lon_bin(p.lon));
            index.bins.entry(key).or_default().push(i);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> GeoPoint {
        self.points[i]
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    fn lat_bin(&self, lat: f64) -> i64 {
        ((lat + 90.0) / self.lat_bin_deg).floor() as i64
    }

    fn lon_bin(&self, lon: f64) -> i64 {
        (((lon + 180.0) / self.lon_bin_deg).floor() as i64).rem_euclid(self.n_lon_bins)
    }

    /// Indices (ascending) of every point with haversine distance ≤ `radius_km`.
    pub fn within(&self, center: GeoPoint, radius_km: f64) -> Result<Vec<usize>> {
        require_positive("radius_km", radius_km)?;
        center.validate()?;
        let mut out = Vec::new();
        self.for_each_candidate(center, radius_km, |i| {
            if haversine_unchecked(center, self.points[i]) <= radius_km {
                out.push(i);
            }
        });
        out.sort_unstable();
        Ok(out)
    }

    /// Closest point within `radius_km`; ties go to the lower index.
    pub fn nearest_within(&self, center: GeoPoint, radius_km: f64) -> Result<Option<(usize, f64)>> {
        require_positive("radius_km", radius_km)?;
        center.validate()?;
        let mut best: Option<(usize, f64)> = None;
        self.for_each_candidate(center, radius_km, |i| {
            let d = haversine_unchecked(center, self.points[i]);
            if d <= radius_km {
                best = match best {
                    Some((bi, bd)) if bd < d || (bd == d && bi < i) => Some((bi, bd)),
                    _ => Some((i, d)),
                };
            }
        });
        Ok(best)
    }

    fn for_each_candidate(&self, center: GeoPoint, radius_km: f64, mut visit: impl FnMut(usize)) {
        // Angular radius, slightly inflated so the box never clips a true hit.
        let delta = radius_km / EARTH_RADIUS_KM * (1.0 + 1e-9) + 1e-12;
        if delta >= std::f64::consts::FRAC_PI_2 {
            (0..self.points.len()).for_each(visit);
            return;
        }
        let delta_deg = delta.to_degrees();
        let lat_lo = center.lat - delta_deg;
        let lat_hi = center.lat + delta_deg;
        let full_lon = lat_lo <= -90.0 || lat_hi >= 90.0;
        let lon_half = if full_lon {
            180.0
        } else {
            let s = delta.sin() / center.lat.to_radians().cos();
            if s >= 1.0 {
                180.0
            } else {
                s.asin().to_degrees() * (1.0 + 1e-9) + 1e-12
            }
        };
        let lat_b0 = self.lat_bin(lat_lo.max(-90.0));
        let lat_b1 = self.lat_bin(lat_hi.min(90.0));
        let (lon_start, lon_count) = if lon_half >= 180.0 {
            (0, self.n_lon_bins)
        } else {
            let lo = ((center.lon - lon_half + 180.0) / self.lon_bin_deg).floor() as i64;
            let hi = ((center.lon + lon_half + 180.0) / self.lon_bin_deg).floor() as i64;
            (lo, (hi - lo + 1).min(self.n_lon_bins))
        };
        let n_candidate_bins = (lat_b1 - lat_b0 + 1) * lon_count;
        if n_candidate_bins as usize > 4 * self.bins.len() + 16 {
            for (&(bl, bo), members) in &self.bins {
                if bl < lat_b0 || bl > lat_b1 {
                    continue;
                }
                let offset = (bo - lon_start).rem_euclid(self.n_lon_bins);
                if offset < lon_count {
                    members.iter().copied().for_each(&mut visit);
                }
            }
            return;
        }
        for bl in lat_b0..=lat_b1 {
            for k in 0..lon_count {
                let bo = (lon_start + k).rem_euclid(self.n_lon_bins);
                if let Some(members) = self.bins.get(&(bl, bo)) {
                    members.iter().copied().for_each(&mut visit);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let a = pt(37.5, 127.0);
        assert_eq!(haversine_km(a, a).unwrap(), 0.0);
    }

    #[test]
    fn one_degree_on_equator() {
        // Independent arc length: pi/180 * R.
        let arc = std::f64::consts::PI / 180.0 * 6371.0088;
        let d = haversine_km(pt(0.0, 0.0), pt(0.0, 1.0)).unwrap();
        assert!((d - arc).abs() < 1e-9);
        assert!((d - 111.195).abs() < 1e-3);
    }

    #[test]
    fn symmetric_pair() {
        let a = pt(0.0, 10.0);
        let b = pt(0.0, 20.0);
        assert_eq!(haversine_km(a, b).unwrap(), haversine_km(b, a).unwrap());
    }

    #[test]
    fn rejects_non_finite() {
        let bad = GeoPoint { lat: f64::NAN, lon: 0.0 };
        assert!(matches!(haversine_km(bad, pt(0.0, 0.0)), Err(Error::InvalidInput(_))));
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in (-89.0f64..89.0, -179.0f64..179.0),
            b in (-89.0f64..89.0, -179.0f64..179.0),
            c in (-89.0f64..89.0, -179.0f64..179.0),
        ) {
            let (a, b, c) = (pt(a.0, a.1), pt(b.0, b.1), pt(c.0, c.1));
            let ab = haversine_km(a, b).unwrap();
            let bc = haversine_km(b, c).unwrap();
            let ac = haversine_km(a, c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, haversine_km(b, a).unwrap());
            prop_assert!(ab >= 0.0);
        }
    }

    fn scan(points: &[GeoPoint], center: GeoPoint, r: f64) -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| haversine_unchecked(center, **p) <= r)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn index_matches_scan_city_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<GeoPoint> = (0..200)
            .map(|_| pt(37.5 + rng.random_range(-0.03..0.03), 127.0 + rng.random_range(-0.04..0.04)))
            .collect();
        let index = SpatialIndex::build(points.clone(), 0.3).unwrap();
        for i in 0..points.len() {
            assert_eq!(index.within(points[i], 0.5).unwrap(), scan(&points, points[i], 0.5));
        }
        for _ in 0..1000 {
            let c = pt(37.5 + rng.random_range(-0.04..0.04), 127.0 + rng.random_range(-0.05..0.05));
            let r = rng.random_range(0.01..3.0);
            assert_eq!(index.within(c, r).unwrap(), scan(&points, c, r));
        }
    }

    #[test]
    fn index_matches_scan_near_poles_and_antimeridian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut points = Vec::new();
        for _ in 0..300 {
            points.push(pt(rng.random_range(85.0..90.0), rng.random_range(-180.0..180.0)));
            points.push(pt(rng.random_range(-10.0..10.0), rng.random_range(175.0..180.0)));
            points.push(pt(rng.random_range(-10.0..10.0), rng.random_range(-180.0..-175.0)));
        }
        let index = SpatialIndex::build(points.clone(), 50.0).unwrap();
        for _ in 0..500 {
            let c = points[rng.random_range(0..points.len())];
            let r = rng.random_range(1.0..800.0);
            assert_eq!(index.within(c, r).unwrap(), scan(&points, c, r));
        }
    }

    #[test]
    fn radius_extremes() {
        let points = vec![pt(37.5, 127.0), pt(37.51, 127.0), pt(37.52, 127.01)];
        let index = SpatialIndex::build(points.clone(), 0.5).unwrap();
        assert_eq!(index.within(points[0], 0.01).unwrap(), vec![0]);
        assert_eq!(index.within(points[0], 100.0).unwrap(), vec![0, 1, 2]);
        assert!(index.within(points[0], 0.0).is_err());
        assert!(index.within(points[0], -1.0).is_err());
    }

    #[test]
    fn nearest_prefers_lower_index_on_tie() {
        let points = vec![pt(0.0, 0.01), pt(0.0, -0.01)];
        let index = SpatialIndex::build(points, 1.0).unwrap();
        let (i, _) = index.nearest_within(pt(0.0, 0.0), 5.0).unwrap().unwrap();
        assert_eq!(i, 0);
        assert!(index.nearest_within(pt(10.0, 10.0), 5.0).unwrap().is_none());
    }

    #[test]
    fn cell_distances() {
        let mut reg = CellRegistry::new();
        let a = CellId::new("a").unwrap();
        let b = CellId::new("b").unwrap();
        reg.insert(a.clone(), pt(37.5, 127.0)).unwrap();
        reg.insert(b.clone(), pt(37.51, 127.0)).unwrap();
        assert_eq!(reg.cell_distance_km(&a, &a).unwrap(), 0.0);
        assert_eq!(
            reg.cell_distance_km(&a, &b).unwrap(),
            haversine_km(pt(37.5, 127.0), pt(37.51, 127.0)).unwrap()
        );
        let missing = CellId::new("zz").unwrap();
        match reg.cell_distance_km(&a, &missing) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn registry_csv_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        std::fs::write(&path, "cell_id,lat,lon\nc1,37.5,127.0\nc2,abc,127.0\n").unwrap();
        match CellRegistry::read_csv(&path) {
            Err(Error::Schema { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "lat");
            }
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "cell_id,lat,lon\nc1,37.5,127.0\n").unwrap();
        let reg = CellRegistry::read_csv(&path).unwrap();
        let out = dir.path().join("out.csv");
        reg.write_csv(&out).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "cell_id,lat,lon\nc1,37.5,127\n");
    }
}
