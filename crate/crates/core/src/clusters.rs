//! Amenity cluster detection from store coordinates.
//!
//! Each store gets an effective shop count `A = Σ exp(-gamma * d)` over the
//! stores within `cutoff_km` (itself included). Local maxima of `A` become
//! cluster peaks and every store within `max_assign_km` of some peak joins
//! the peak with the strongest decayed influence, i.e. the nearest one.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::geo::{haversine_unchecked, GeoPoint, SpatialIndex};
use crate::table::{Table, TableWriter};

/// Decay rate that halves influence every 91.44 m.
pub const DEFAULT_GAMMA: f64 = 7.58;
/// Half a mile, the reference walking distance.
pub const HALF_MILE_KM: f64 = 0.8047;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorePoint {
    pub store_id: String,
    pub location: GeoPoint,
    pub category_small: String,
    pub category_large: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub gamma: f64,
    pub cutoff_km: f64,
    pub peak_radius_km: f64,
    pub max_assign_km: f64,
    /// Peaks need at least this many effective shops. Sparse outliers in the
    /// tail of a cluster are otherwise local maxima of their own.
    pub min_peak_score: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            gamma: DEFAULT_GAMMA,
            cutoff_km: 2.0,
            peak_radius_km: 0.2,
            max_assign_km: HALF_MILE_KM,
            min_peak_score: 10.0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("gamma", self.gamma)?;
        if !(self.cutoff_km > 0.0) {
            return Err(Error::param("cutoff_km", self.cutoff_km, "(0, inf]"));
        }
        require_positive("peak_radius_km", self.peak_radius_km)?;
        require_positive("max_assign_km", self.max_assign_km)?;
        if !self.min_peak_score.is_finite() || self.min_peak_score < 0.0 {
            return Err(Error::param("min_peak_score", self.min_peak_score, "[0, inf)"));
        }
        Ok(())
    }
}

/// Decay kernel `exp(-gamma * d)`.
#[inline]
pub fn decay(gamma: f64, distance_km: f64) -> f64 {
    (-gamma * distance_km).exp()
}

/// Effective shop counts, aligned with the store slice they were computed on.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub store_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub gamma: f64,
    pub cutoff_km: f64,
    /// Upper bound on the mass dropped by truncation: `N * exp(-gamma * cutoff)`.
    pub truncation_bound: f64,
}

impl DensityField {
    pub fn score(&self, store_id: &str) -> Option<f64> {
        self.store_ids
            .iter()
            .position(|s| s == store_id)
            .map(|i| self.scores[i])
    }
}

fn check_stores(stores: &[StorePoint]) -> Result<()> {
    if stores.is_empty() {
        return Err(Error::invalid("store list is empty"));
    }
    let mut seen = HashSet::with_capacity(stores.len());
    for s in stores {
        s.location.validate()?;
        if s.store_id.is_empty() {
            return Err(Error::invalid("empty store id"));
        }
        if s.category_small.is_empty() || s.category_large.is_empty() {
            return Err(Error::invalid(format!("store `{}` has an empty category", s.store_id)));
        }
        if !seen.insert(s.store_id.as_str()) {
            return Err(Error::invalid(format!("duplicate store id `{}`", s.store_id)));
        }
    }
    Ok(())
}

fn build_index(stores: &[StorePoint], bin_km: f64) -> Result<SpatialIndex> {
    SpatialIndex::build(stores.iter().map(|s| s.location).collect(), bin_km)
}

/// Effective number of shops around every store. `cutoff_km` may be infinite.
pub fn effective_density(stores: &[StorePoint], gamma: f64, cutoff_km: f64) -> Result<DensityField> {
    check_stores(stores)?;
    require_positive("gamma", gamma)?;
    if !(cutoff_km > 0.0) {
        return Err(Error::param("cutoff_km", cutoff_km, "(0, inf]"));
    }
    let scores: Vec<f64> = if cutoff_km.is_finite() {
        let index = build_index(stores, cutoff_km.clamp(0.05, 5.0))?;
        stores
            .par_iter()
            .map(|s| {
                index
                    .within(s.location, cutoff_km)
                    .map(|nbrs| {
                        nbrs.iter()
                            .map(|&j| decay(gamma, haversine_unchecked(s.location, stores[j].location)))
                            .sum()
                    })
            })
            .collect::<Result<_>>()?
    } else {
        stores
            .par_iter()
            .map(|s| {
                stores
                    .iter()
                    .map(|t| decay(gamma, haversine_unchecked(s.location, t.location)))
                    .sum()
            })
            .collect()
    };
    let truncation_bound = stores.len() as f64 * decay(gamma, cutoff_km);
    Ok(DensityField {
        store_ids: stores.iter().map(|s| s.store_id.clone()).collect(),
        scores,
        gamma,
        cutoff_km,
        truncation_bound,
    })
}

/// Strict "beats" order: higher score, then smaller id.
fn outranks(score_a: f64, id_a: &str, score_b: f64, id_b: &str) -> bool {
    match score_a.partial_cmp(&score_b) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => id_a < id_b,
    }
}

fn check_field(field: &DensityField, stores: &[StorePoint]) -> Result<()> {
    if field.store_ids.len() != stores.len()
        || field.store_ids.iter().zip(stores).any(|(id, s)| *id != s.store_id)
    {
        return Err(Error::invalid("density field was not computed on this store list"));
    }
    Ok(())
}

/// Ids of stores whose score beats every other store within `peak_radius_km`,
/// sorted by score descending then id.
pub fn find_peaks(field: &DensityField, stores: &[StorePoint], peak_radius_km: f64) -> Result<Vec<String>> {
    find_peaks_with_floor(field, stores, peak_radius_km, 0.0)
}

pub fn find_peaks_with_floor(
    field: &DensityField,
    stores: &[StorePoint],
    peak_radius_km: f64,
    min_score: f64,
) -> Result<Vec<String>> {
    check_field(field, stores)?;
    require_positive("peak_radius_km", peak_radius_km)?;
    let index = build_index(stores, peak_radius_km.max(0.05))?;
    let flags: Vec<bool> = (0..stores.len())
        .into_par_iter()
        .map(|a| {
            if field.scores[a] < min_score {
                return Ok(false);
            }
            let nbrs = index.within(stores[a].location, peak_radius_km)?;
            Ok(nbrs.iter().all(|&b| {
                b == a
                    || outranks(
                        field.scores[a],
                        &stores[a].store_id,
                        field.scores[b],
                        &stores[b].store_id,
                    )
            }))
        })
        .collect::<Result<_>>()?;
    let mut peaks: Vec<usize> = (0..stores.len()).filter(|&i| flags[i]).collect();
    peaks.sort_by(|&a, &b| {
        field.scores[b]
            .total_cmp(&field.scores[a])
            .then_with(|| stores[a].store_id.cmp(&stores[b].store_id))
    });
    Ok(peaks.into_iter().map(|i| stores[i].store_id.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmenityCluster {
    pub cluster_id: usize,
    pub peak_store: String,
    pub centroid: GeoPoint,
    /// Sorted store ids.
    pub members: Vec<String>,
    pub radius_km: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ClusterPartition {
    pub clusters: Vec<AmenityCluster>,
    /// Stores farther than the assignment radius from every peak.
    pub unassigned: Vec<String>,
}

impl ClusterPartition {
    pub fn mean_radius_km(&self) -> f64 {
        if self.clusters.is_empty() {
            return 0.0;
        }
        self.clusters.iter().map(|c| c.radius_km).sum::<f64>() / self.clusters.len() as f64
    }

    /// store id -> cluster id for assigned stores.
    pub fn membership(&self) -> BTreeMap<String, usize> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (m.clone(), c.cluster_id)))
            .collect()
    }

    pub fn write_csv(&self, clusters_path: &Path, membership_path: &Path) -> Result<()> {
        let mut w = TableWriter::create(
            clusters_path,
            &["cluster_id", "peak_store", "centroid_lat", "centroid_lon", "n_members", "radius_km"],
        )?;
        for c in &self.clusters {
            w.row([
                c.cluster_id.to_string(),
                c.peak_store.clone(),
                c.centroid.lat.to_string(),
                c.centroid.lon.to_string(),
                c.members.len().to_string(),
                c.radius_km.to_string(),
            ])?;
        }
        w.finish()?;
        let mut w = TableWriter::create(membership_path, &["store_id", "cluster_id"])?;
        for (store, cluster) in self.membership() {
            w.row([store, cluster.to_string()])?;
        }
        w.finish()
    }

    /// Rebuilds a partition from the two files written by [`Self::write_csv`].
    pub fn read_csv(clusters_path: &Path, membership_path: &Path) -> Result<Self> {
        let table = Table::read(
            clusters_path,
            &["cluster_id", "peak_store", "centroid_lat", "centroid_lon", "n_members", "radius_km"],
        )?;
        let mut clusters = Vec::with_capacity(table.len());
        let mut by_id = HashMap::new();
        for row in table.rows() {
            let cluster_id: usize = row.parse("cluster_id")?;
            let centroid = GeoPoint {
                lat: row.float("centroid_lat")?,
                lon: row.float("centroid_lon")?,
            };
            centroid.validate().map_err(|e| row.error("centroid_lat", e.to_string()))?;
            if by_id.insert(cluster_id, clusters.len()).is_some() {
                return Err(row.error("cluster_id", format!("duplicate cluster id {cluster_id}")));
            }
            clusters.push(AmenityCluster {
                cluster_id,
                peak_store: row.str("peak_store")?.to_string(),
                centroid,
                members: Vec::new(),
                radius_km: row.float("radius_km")?,
            });
        }
        let table = Table::read(membership_path, &["store_id", "cluster_id"])?;
        for row in table.rows() {
            let cluster_id: usize = row.parse("cluster_id")?;
            let slot = *by_id
                .get(&cluster_id)
                .ok_or_else(|| row.error("cluster_id", format!("unknown cluster id {cluster_id}")))?;
            clusters[slot].members.push(row.str("store_id")?.to_string());
        }
        for c in &mut clusters {
            c.members.sort();
        }
        Ok(ClusterPartition {
            clusters,
            unassigned: Vec::new(),
        })
    }
}

/// Assigns every store within `max_assign_km` of a peak to the peak with the
/// largest `exp(-gamma d)`; ties go to the higher-scoring peak, then the
/// smaller peak id. Cluster ids follow the order of `peaks`.
pub fn assign_clusters(
    stores: &[StorePoint],
    peaks: &[String],
    field: &DensityField,
    max_assign_km: f64,
) -> Result<ClusterPartition> {
    check_field(field, stores)?;
    require_positive("max_assign_km", max_assign_km)?;
    if peaks.is_empty() {
        return Err(Error::invalid("no peaks to assign stores to"));
    }
    let position: HashMap<&str, usize> = stores
        .iter()
        .enumerate()
        .map(|(i, s)| (s.store_id.as_str(), i))
        .collect();
    let peak_idx: Vec<usize> = peaks
        .iter()
        .map(|p| {
            position
                .get(p.as_str())
                .copied()
                .ok_or_else(|| Error::MissingKey(p.clone()))
        })
        .collect::<Result<_>>()?;
    let peak_index = SpatialIndex::build(
        peak_idx.iter().map(|&i| stores[i].location).collect(),
        max_assign_km.max(0.05),
    )?;

    let gamma = field.gamma;
    let choice: Vec<Option<(usize, f64)>> = stores
        .par_iter()
        .map(|s| {
            let candidates = peak_index.within(s.location, max_assign_km)?;
            let mut best: Option<(usize, f64, f64)> = None;
            for k in candidates {
                let p = peak_idx[k];
                let d = haversine_unchecked(s.location, stores[p].location);
                let w = decay(gamma, d);
                let better = match best {
                    None => true,
                    Some((bk, bw, _)) => {
                        let bp = peak_idx[bk];
                        match w.partial_cmp(&bw) {
                            Some(Ordering::Greater) => true,
                            Some(Ordering::Less) => false,
                            _ => outranks(
                                field.scores[p],
                                &stores[p].store_id,
                                field.scores[bp],
                                &stores[bp].store_id,
                            ),
                        }
                    }
                };
                if better {
                    best = Some((k, w, d));
                }
            }
            Ok(best.map(|(k, _, d)| (k, d)))
        })
        .collect::<Result<_>>()?;

    let mut clusters: Vec<AmenityCluster> = peak_idx
        .iter()
        .enumerate()
        .map(|(k, &p)| AmenityCluster {
            cluster_id: k,
            peak_store: stores[p].store_id.clone(),
            centroid: stores[p].location,
            members: Vec::new(),
            radius_km: 0.0,
        })
        .collect();
    let mut sums = vec![(0.0f64, 0.0f64); clusters.len()];
    let mut unassigned = Vec::new();
    for (s, c) in stores.iter().zip(&choice) {
        match c {
            Some((k, d)) => {
                let cl = &mut clusters[*k];
                cl.members.push(s.store_id.clone());
                cl.radius_km = cl.radius_km.max(*d);
                sums[*k].0 += s.location.lat;
                sums[*k].1 += s.location.lon;
            }
            None => unassigned.push(s.store_id.clone()),
        }
    }
    for (cl, (slat, slon)) in clusters.iter_mut().zip(sums) {
        // Every peak is within distance 0 of itself, so members is never empty.
        let n = cl.members.len() as f64;
        cl.centroid = GeoPoint {
            lat: slat / n,
            lon: slon / n,
        };
        cl.members.sort();
    }
    unassigned.sort();
    Ok(ClusterPartition {
        clusters,
        unassigned,
    })
}

/// Runs density, peak finding and assignment with one parameter set.
pub fn detect_clusters(stores: &[StorePoint], params: &ClusterParams) -> Result<(DensityField, ClusterPartition)> {
    params.validate()?;
    let field = effective_density(stores, params.gamma, params.cutoff_km)?;
    let peaks = find_peaks_with_floor(&field, stores, params.peak_radius_km, params.min_peak_score)?;
    let partition = assign_clusters(stores, &peaks, &field, params.max_assign_km)?;
    Ok((field, partition))
}

/// Reads `store_id,lat,lon,category_small,category_large`.
pub fn read_stores(path: &Path) -> Result<Vec<StorePoint>> {
    let table = Table::read(path, &["store_id", "lat", "lon", "category_small", "category_large"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.len());
    for row in table.rows() {
        let store_id = row.str("store_id")?.to_string();
        if !seen.insert(store_id.clone()) {
            return Err(row.error("store_id", format!("duplicate store id `{store_id}`")));
        }
        let location = GeoPoint {
            lat: row.float("lat")?,
            lon: row.float("lon")?,
        };
        location.validate().map_err(|e| row.error("lat", e.to_string()))?;
        out.push(StorePoint {
            store_id,
            location,
            category_small: row.str("category_small")?.to_string(),
            category_large: row.str("category_large")?.to_string(),
        });
    }
    Ok(out)
}

pub fn write_stores(path: &Path, stores: &[StorePoint]) -> Result<()> {
    let mut w = TableWriter::create(path, &["store_id", "lat", "lon", "category_small", "category_large"])?;
    for s in stores {
        w.row([
            s.store_id.clone(),
            s.location.lat.to_string(),
            s.location.lon.to_string(),
            s.category_small.clone(),
            s.category_large.clone(),
        ])?;
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::KM_PER_DEGREE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(id: &str, lat: f64, lon: f64) -> StorePoint {
        StorePoint {
            store_id: id.to_string(),
            location: GeoPoint { lat, lon },
            category_small: "p".into(),
            category_large: "L".into(),
        }
    }

    #[test]
    fn kernel_calibration() {
        assert!((decay(DEFAULT_GAMMA, 0.09144) - 0.5).abs() <= 1e-3);
        assert!((decay(DEFAULT_GAMMA, 0.8047) - 0.0022).abs() <= 1e-4);
    }

    #[test]
    fn isolated_store_counts_itself() {
        let f = effective_density(&[store("a", 37.5, 127.0)], DEFAULT_GAMMA, 2.0).unwrap();
        assert_eq!(f.scores, vec![1.0]);
    }

    #[test]
    fn pair_at_half_distance() {
        let dlat = 0.09144 / KM_PER_DEGREE;
        let stores = [store("a", 37.5, 127.0), store("b", 37.5 + dlat, 127.0)];
        let f = effective_density(&stores, DEFAULT_GAMMA, 2.0).unwrap();
        for s in &f.scores {
            assert!((s - 1.5).abs() < 1e-3, "{s}");
        }
    }

    #[test]
    fn empty_and_bad_params() {
        assert!(effective_density(&[], DEFAULT_GAMMA, 2.0).is_err());
        let s = [store("a", 0.0, 0.0)];
        assert!(effective_density(&s, 0.0, 2.0).is_err());
        assert!(effective_density(&s, DEFAULT_GAMMA, 0.0).is_err());
        let dup = [store("a", 0.0, 0.0), store("a", 0.0, 0.001)];
        assert!(effective_density(&dup, DEFAULT_GAMMA, 2.0).is_err());
    }

    fn random_town(seed: u64, n: usize) -> Vec<StorePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                store(
                    &format!("s{i:04}"),
                    37.5 + rng.random_range(-0.02..0.02),
                    127.0 + rng.random_range(-0.02..0.02),
                )
            })
            .collect()
    }

    #[test]
    fn truncation_matches_exhaustive_sum() {
        let stores = random_town(3, 100);
        let exact = effective_density(&stores, DEFAULT_GAMMA, f64::INFINITY).unwrap();
        let cut = effective_density(&stores, DEFAULT_GAMMA, 2.0).unwrap();
        // Brute-force oracle, written out separately.
        for (i, s) in stores.iter().enumerate() {
            let brute: f64 = stores
                .iter()
                .map(|t| (-DEFAULT_GAMMA * crate::geo::haversine_km(s.location, t.location).unwrap()).exp())
                .sum();
            assert!((exact.scores[i] - brute).abs() < 1e-9);
            assert!((exact.scores[i] - cut.scores[i]).abs() <= 100.0 * (-15.16f64).exp());
        }
        assert!(cut.truncation_bound <= 2.6e-5 + 1e-7);
    }

    #[test]
    fn density_is_monotone_in_cutoff() {
        let stores = random_town(5, 80);
        let mut prev = effective_density(&stores, DEFAULT_GAMMA, 0.1).unwrap().scores;
        for cutoff in [0.3, 0.8, 1.5, 3.0, f64::INFINITY] {
            let next = effective_density(&stores, DEFAULT_GAMMA, cutoff).unwrap().scores;
            for (a, b) in prev.iter().zip(&next) {
                assert!(b >= a);
            }
            prev = next;
        }
    }

    #[test]
    fn single_store_is_its_own_peak() {
        let stores = [store("a", 37.5, 127.0)];
        let f = effective_density(&stores, DEFAULT_GAMMA, 2.0).unwrap();
        assert_eq!(find_peaks(&f, &stores, 0.2).unwrap(), vec!["a".to_string()]);
    }

    #[test]
    fn ties_resolved_by_smaller_id() {
        // Co-located stores share the same score exactly.
        let stores = [
            store("c", 37.5, 127.0),
            store("a", 37.5, 127.0),
            store("b", 37.5, 127.0),
            store("z", 37.6, 127.0),
            store("y", 37.6, 127.0),
        ];
        let f = effective_density(&stores, DEFAULT_GAMMA, 2.0).unwrap();
        let peaks = find_peaks(&f, &stores, 0.2).unwrap();
        assert_eq!(peaks, vec!["a".to_string(), "y".to_string()]);
    }

    #[test]
    fn two_gaussian_town() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let normal = rand_distr::Normal::new(0.0, 0.15).unwrap();
        let modes = [(0.0, 0.0), (3.0, 0.0)];
        let lat0: f64 = 37.5;
        let kx = KM_PER_DEGREE * lat0.to_radians().cos();
        let mut stores = Vec::new();
        for (m, (x, y)) in modes.iter().enumerate() {
            for i in 0..150 {
                let dx: f64 = rng.sample(normal);
                let dy: f64 = rng.sample(normal);
                stores.push(store(&format!("m{m}_{i:03}"), lat0 + (y + dy) / KM_PER_DEGREE, 127.0 + (x + dx) / kx));
            }
        }
        let (field, partition) = detect_clusters(&stores, &ClusterParams::default()).unwrap();
        assert_eq!(partition.clusters.len(), 2);
        for (x, y) in modes {
            let mode = GeoPoint { lat: lat0 + y / KM_PER_DEGREE, lon: 127.0 + x / kx };
            let nearest = partition
                .clusters
                .iter()
                .map(|c| {
                    let i = field.store_ids.iter().position(|s| *s == c.peak_store).unwrap();
                    haversine_unchecked(stores[i].location, mode)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.15, "peak {nearest} km from planted mode");
        }
    }

    #[test]
    fn equidistant_store_goes_to_stronger_peak() {
        let d = 0.3 / KM_PER_DEGREE;
        // Mirror-symmetric about the equator, so both peaks sit at exactly the same
        // distance from "m"; "q" has an extra neighbour and scores higher.
        let stores = [
            store("p", -d, 127.0),
            store("q", d, 127.0),
            store("q2", d + 0.02 / KM_PER_DEGREE, 127.0),
            store("m", 0.0, 127.0),
        ];
        let field = effective_density(&stores, DEFAULT_GAMMA, 2.0).unwrap();
        assert!(field.scores[1] > field.scores[0]);
        let dp = haversine_unchecked(stores[3].location, stores[0].location);
        let dq = haversine_unchecked(stores[3].location, stores[1].location);
        assert_eq!(dp, dq);
        for peaks in [vec!["q".to_string(), "p".to_string()], vec!["p".to_string(), "q".to_string()]] {
            let part = assign_clusters(&stores, &peaks, &field, HALF_MILE_KM).unwrap();
            let q_cluster = part.clusters.iter().find(|c| c.peak_store == "q").unwrap().cluster_id;
            assert_eq!(part.membership()["m"], q_cluster);
        }
    }

    #[test]
    fn far_store_left_unassigned() {
        let stores = [store("p", 37.5, 127.0), store("far", 37.5 + 10.0 / KM_PER_DEGREE, 127.0)];
        let field = effective_density(&stores, DEFAULT_GAMMA, 2.0).unwrap();
        let part = assign_clusters(&stores, &["p".to_string()], &field, HALF_MILE_KM).unwrap();
        assert_eq!(part.unassigned, vec!["far".to_string()]);
        assert_eq!(part.clusters[0].members, vec!["p".to_string()]);
        assert!(assign_clusters(&stores, &[], &field, HALF_MILE_KM).is_err());
    }

    #[test]
    fn partition_properties_hold() {
        let stores = random_town(9, 400);
        let params = ClusterParams { min_peak_score: 1.0, ..ClusterParams::default() };
        let (_, part) = detect_clusters(&stores, &params).unwrap();
        let (_, again) = detect_clusters(&stores, &params).unwrap();
        assert_eq!(part.clusters, again.clusters);
        let loc: HashMap<&str, GeoPoint> = stores.iter().map(|s| (s.store_id.as_str(), s.location)).collect();
        let mut seen = HashSet::new();
        for c in &part.clusters {
            assert!(c.members.contains(&c.peak_store));
            let peak = loc[c.peak_store.as_str()];
            let mut max_d: f64 = 0.0;
            for m in &c.members {
                assert!(seen.insert(m.clone()));
                let d = haversine_unchecked(loc[m.as_str()], peak);
                assert!(d <= params.max_assign_km);
                max_d = max_d.max(d);
            }
            assert_eq!(max_d, c.radius_km);
        }
        assert_eq!(seen.len() + part.unassigned.len(), stores.len());
    }

    #[test]
    fn partition_files_round_trip() {
        let stores = random_town(13, 150);
        let params = ClusterParams { min_peak_score: 1.0, ..ClusterParams::default() };
        let (_, part) = detect_clusters(&stores, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("c.csv"), dir.path().join("m.csv"));
        part.write_csv(&a, &b).unwrap();
        let back = ClusterPartition::read_csv(&a, &b).unwrap();
        assert_eq!(back.clusters, part.clusters);
    }
}
