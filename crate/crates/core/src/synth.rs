//! Synthetic towns with planted ground truth.
//!
//! A world is a jittered lattice of shopping peaks with Gaussian store
//! scatter, a 50 m cell grid and one distant cell that stands in for
//! shoppers from outside the town.
//!
//! Transactions come in three layers.
//! - Baseline years hold consumer groups (residence cell, demographic,
//!   shopping cluster) that each favour one amenity block. Their
//!   co-specialisation defines the proximity matrix.
//! - Out-of-town purchases in the regression years carry the planted
//!   presence matrix: their volume dwarfs local trade, so cluster-level
//!   RCA recovers it. They map to no residence cluster and never enter the
//!   panel or the flow networks.
//! - Local purchases hold one record per destination, residence, amenity
//!   and year, drawn from a log-linear model in the planted relatedness
//!   density and rounded half-to-even.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clusters::{detect_clusters, effective_density, find_peaks_with_floor, write_stores, ClusterParams, ClusterPartition, StorePoint, HALF_MILE_KM};
use crate::complexity::{proximity, rca, relatedness_from_binary, CountMatrix, ProximityMatrix};
use crate::error::{Error, Result};
use crate::geo::{CellId, CellRegistry, GeoPoint, KM_PER_DEGREE};
use crate::panel::{
    cell_cluster_map, group_count_matrix, write_transactions, ClusterDistances, GroupScope, MappedRecord, Moments,
    Period, PeriodGroup, PeriodGroups, TransactionRecord,
};
use crate::typology::{write_profiles, ClusterProfile};

pub const GENERATOR_VERSION: &str = concat!("cspace-synth/", env!("CARGO_PKG_VERSION"));

pub const STORES_FILE: &str = "stores.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const CELL_PITCH_KM: f64 = 0.05;
const CELL_MARGIN_KM: f64 = 0.5;
const AGE_BANDS: [&str; 3] = ["20s", "30s", "40s"];
const GENDERS: [&str; 2] = ["F", "M"];
const BASELINE_COUNTS: (u64, u64) = (10, 20);
/// Minimum RCA margin kept on planted presence entries.
const PRESENCE_MARGIN: f64 = 1.5;
const REGRESSION_MONTH: u8 = 6;

/// Floating, working and residential population archetypes, ordered by
/// descending floating plus working density.
pub const ARCHETYPES: [[f64; 3]; 5] = [
    [12000.0, 9000.0, 1500.0],
    [8000.0, 5000.0, 3000.0],
    [5000.0, 2500.0, 6000.0],
    [2500.0, 1500.0, 9000.0],
    [1000.0, 600.0, 12000.0],
];

/// Coefficients of the count model on the `ln(1 + count)` scale. `omega`
/// and `log_dist` enter standardized over the dense panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionTruth {
    pub intercept: f64,
    pub beta_omega: f64,
    pub beta_dist: f64,
    pub beta_int: f64,
    pub beta_covid: f64,
    pub beta_recovery: f64,
    pub fe_sd: f64,
    pub noise_sd: f64,
}

impl Default for RegressionTruth {
    fn default() -> Self {
        RegressionTruth {
            intercept: 6.0,
            beta_omega: 0.1,
            beta_dist: -0.6,
            beta_int: -0.08,
            beta_covid: -0.05,
            beta_recovery: -0.03,
            fe_sd: 0.3,
            noise_sd: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Seeds the count noise separately, to redraw outcomes on a fixed world.
    pub noise_seed: Option<u64>,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub n_peaks: usize,
    pub stores_per_peak: usize,
    pub peak_spacing_km: f64,
    pub peak_jitter_km: f64,
    pub store_scatter_sd_km: f64,
    pub n_amenities: usize,
    pub n_blocks: usize,
    pub within_block_prob: f64,
    pub cross_block_prob: f64,
    pub n_residence_cells: usize,
    pub shopping_areas: usize,
    pub baseline_years: Vec<u16>,
    pub periods: PeriodGroups,
    pub presence_prob: f64,
    pub presence_persistence: f64,
    pub background_count: u64,
    pub profile_noise: f64,
    pub delta_km: f64,
    pub truth: RegressionTruth,
    pub cluster: ClusterParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            noise_seed: None,
            origin_lat: 37.50,
            origin_lon: 127.00,
            n_peaks: 20,
            stores_per_peak: 100,
            peak_spacing_km: 2.0,
            peak_jitter_km: 0.1,
            store_scatter_sd_km: 0.15,
            n_amenities: 48,
            n_blocks: 6,
            within_block_prob: 0.8,
            cross_block_prob: 0.02,
            n_residence_cells: 400,
            shopping_areas: 3,
            baseline_years: vec![2018],
            periods: PeriodGroups::default(),
            presence_prob: 0.15,
            presence_persistence: 0.7,
            background_count: 10_000_000,
            profile_noise: 0.05,
            delta_km: 0.025,
            truth: RegressionTruth::default(),
            cluster: ClusterParams::default(),
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, v, "[0, 1]"))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, v, "[0, inf)"))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        GeoPoint::new(self.origin_lat, self.origin_lon)?;
        if self.n_peaks == 0 {
            return Err(Error::param("n_peaks", self.n_peaks, "[1, inf)"));
        }
        if self.stores_per_peak == 0 {
            return Err(Error::param("stores_per_peak", self.stores_per_peak, "[1, inf)"));
        }
        nonneg("peak_jitter_km", self.peak_jitter_km)?;
        nonneg("store_scatter_sd_km", self.store_scatter_sd_km)?;
        if !(self.peak_spacing_km.is_finite() && self.peak_spacing_km > 0.0) {
            return Err(Error::param("peak_spacing_km", self.peak_spacing_km, "(0, inf)"));
        }
        let gap = self.peak_spacing_km - 2.0 * self.peak_jitter_km;
        if gap <= 4.0 * self.store_scatter_sd_km {
            return Err(Error::Config(format!(
                "peaks are not separable: spacing {} km less twice the jitter {} km must exceed 4 x scatter sd {} km",
                self.peak_spacing_km, self.peak_jitter_km, self.store_scatter_sd_km
            )));
        }
        if self.n_amenities < 2 || self.n_amenities > 999 {
            return Err(Error::param("n_amenities", self.n_amenities, "[2, 999]"));
        }
        if self.n_blocks == 0 || self.n_blocks > self.n_amenities {
            return Err(Error::param("n_blocks", self.n_blocks, "[1, n_amenities]"));
        }
        unit_interval("within_block_prob", self.within_block_prob)?;
        unit_interval("cross_block_prob", self.cross_block_prob)?;
        unit_interval("presence_prob", self.presence_prob)?;
        unit_interval("presence_persistence", self.presence_persistence)?;
        if self.n_residence_cells < self.n_peaks {
            return Err(Error::param("n_residence_cells", self.n_residence_cells, "[n_peaks, inf)"));
        }
        if self.shopping_areas == 0 || self.shopping_areas > self.n_peaks {
            return Err(Error::param("shopping_areas", self.shopping_areas, "[1, n_peaks]"));
        }
        if self.baseline_years.is_empty() {
            return Err(Error::Config("baseline_years is empty".into()));
        }
        self.periods.validate()?;
        let years = self.periods.all_years();
        if let Some(y) = self.baseline_years.iter().find(|y| years.contains(y)) {
            return Err(Error::Config(format!("baseline year {y} is also a regression year")));
        }
        if self.background_count == 0 {
            return Err(Error::param("background_count", 0, "[1, inf)"));
        }
        nonneg("profile_noise", self.profile_noise)?;
        if !(self.delta_km.is_finite() && self.delta_km > 0.0) {
            return Err(Error::param("delta_km", self.delta_km, "(0, inf)"));
        }
        let t = &self.truth;
        for (name, v) in [
            ("truth.intercept", t.intercept),
            ("truth.beta_omega", t.beta_omega),
            ("truth.beta_dist", t.beta_dist),
            ("truth.beta_int", t.beta_int),
            ("truth.beta_covid", t.beta_covid),
            ("truth.beta_recovery", t.beta_recovery),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, v, "finite"));
            }
        }
        nonneg("truth.fe_sd", t.fe_sd)?;
        nonneg("truth.noise_sd", t.noise_sd)?;
        self.cluster.validate()
    }

    pub fn amenities(&self) -> Vec<String> {
        (1..=self.n_amenities).map(|p| format!("a{p:03}")).collect()
    }

    pub fn block_of(&self, amenity: usize) -> usize {
        amenity * self.n_blocks / self.n_amenities
    }

    pub fn blocks(&self) -> Vec<Vec<String>> {
        let names = self.amenities();
        let mut out = vec![Vec::new(); self.n_blocks];
        for (p, a) in names.into_iter().enumerate() {
            out[self.block_of(p)].push(a);
        }
        out
    }

    /// Expected proximity within and across blocks for an infinite number
    /// of groups. Cross is `None` with a single block.
    pub fn analytic_phi(&self) -> (f64, Option<f64>) {
        let b = self.n_blocks as f64;
        let (qw, qc) = (self.within_block_prob, self.cross_block_prob);
        let ubiquity = qw / b + qc * (1.0 - 1.0 / b);
        let within = (qw * qw / b + qc * qc * (1.0 - 1.0 / b)) / ubiquity;
        let cross = (self.n_blocks > 1).then(|| (2.0 * qw * qc / b + qc * qc * (1.0 - 2.0 / b)) / ubiquity);
        (within, cross)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_WORLD: u64 = 0;
const STREAM_PRESENCE: u64 = 1;
const STREAM_EFFECTS: u64 = 2;
const STREAM_PROFILES: u64 = 3;
const STREAM_BASELINE: u64 = 1 << 20;
const STREAM_COUNTS: u64 = 1 << 40;

/// Local tangent plane around the origin, in km.
#[derive(Debug, Clone, Copy)]
struct Frame {
    lat0: f64,
    lon0: f64,
    km_per_lon: f64,
}

impl Frame {
    fn new(lat0: f64, lon0: f64) -> Self {
        Frame {
            lat0,
            lon0,
            km_per_lon: KM_PER_DEGREE * lat0.to_radians().cos(),
        }
    }

    fn geo(&self, x: f64, y: f64) -> GeoPoint {
        GeoPoint {
            lat: self.lat0 + y / KM_PER_DEGREE,
            lon: self.lon0 + x / self.km_per_lon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub stores: Vec<StorePoint>,
    /// Generating peak of each store, aligned with `stores`.
    pub store_peak: Vec<usize>,
    pub peaks: Vec<GeoPoint>,
    pub registry: CellRegistry,
    pub partition: ClusterPartition,
    /// Detected cluster of each planted peak.
    pub peak_cluster: Vec<Option<usize>>,
    /// In-town residence cells with their peak.
    pub residence_cells: Vec<(CellId, usize)>,
    /// Destination cell of each peak.
    pub dest_cells: Vec<CellId>,
    pub background_cell: CellId,
    pub profiles: Vec<ClusterProfile>,
    /// Planted archetype letter by detected cluster.
    pub planted_types: BTreeMap<usize, char>,
}

pub fn gen_world(config: &SynthConfig) -> Result<World> {
    config.validate()?;
    let frame = Frame::new(config.origin_lat, config.origin_lon);
    let mut rng = stream_rng(config.seed, STREAM_WORLD);

    let cols = (config.n_peaks as f64).sqrt().ceil() as usize;
    let jitter = config.peak_jitter_km;
    let peak_xy: Vec<(f64, f64)> = (0..config.n_peaks)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            let mut jit = || if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
            let dx = jit();
            let dy = jit();
            (c as f64 * config.peak_spacing_km + dx, r as f64 * config.peak_spacing_km + dy)
        })
        .collect();

    let amenities = config.amenities();
    let mut stores = Vec::with_capacity(config.n_peaks * config.stores_per_peak);
    let mut store_xy = Vec::with_capacity(stores.capacity());
    let mut store_peak = Vec::with_capacity(stores.capacity());
    for (k, &(px, py)) in peak_xy.iter().enumerate() {
        for s in 0..config.stores_per_peak {
            let (x, y) = if s == 0 {
                (px, py)
            } else {
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                (px + config.store_scatter_sd_km * zx, py + config.store_scatter_sd_km * zy)
            };
            let idx = stores.len();
            let p = idx % config.n_amenities;
            stores.push(StorePoint {
                store_id: format!("s{idx:06}"),
                location: frame.geo(x, y),
                category_small: amenities[p].clone(),
                category_large: format!("b{}", config.block_of(p) + 1),
            });
            store_xy.push((x, y));
            store_peak.push(k);
        }
    }

    // Cell grid over the store bounding box.
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &store_xy {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    x0 -= CELL_MARGIN_KM;
    y0 -= CELL_MARGIN_KM;
    let n_cols = ((x1 + CELL_MARGIN_KM - x0) / CELL_PITCH_KM).ceil() as i64 + 1;
    let n_rows = ((y1 + CELL_MARGIN_KM - y0) / CELL_PITCH_KM).ceil() as i64 + 1;
    let cell_id = |r: i64, c: i64| CellId::new(format!("g{r:04}_{c:04}"));
    let mut registry = CellRegistry::new();
    for r in 0..n_rows {
        for c in 0..n_cols {
            let p = frame.geo(x0 + c as f64 * CELL_PITCH_KM, y0 + r as f64 * CELL_PITCH_KM);
            registry.insert(cell_id(r, c)?, p)?;
        }
    }
    let background_cell = CellId::new("ext0000")?;
    // About 110 km south of town, outside every assignment radius.
    registry.insert(background_cell.clone(), frame.geo(0.0, -110.0))?;

    let mut residence_cells = Vec::with_capacity(config.n_residence_cells);
    let mut dest_cells = Vec::with_capacity(config.n_peaks);
    for (k, &(px, py)) in peak_xy.iter().enumerate() {
        let need = config.n_residence_cells / config.n_peaks + usize::from(k < config.n_residence_cells % config.n_peaks);
        let (fc, fr) = ((px - x0) / CELL_PITCH_KM, (py - y0) / CELL_PITCH_KM);
        let reach = (need as f64).sqrt().ceil() as i64 + 1;
        let (rc, rr) = (fc.round() as i64, fr.round() as i64);
        let mut near: Vec<(f64, i64, i64)> = Vec::new();
        for r in (rr - reach).max(0)..=(rr + reach).min(n_rows - 1) {
            for c in (rc - reach).max(0)..=(rc + reach).min(n_cols - 1) {
                near.push(((r as f64 - fr).powi(2) + (c as f64 - fc).powi(2), r, c));
            }
        }
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        dest_cells.push(cell_id(near[0].1, near[0].2)?);
        for &(_, r, c) in near.iter().take(need) {
            residence_cells.push((cell_id(r, c)?, k));
        }
    }

    // A world too sparse to clear the peak floor has no clusters.
    let field = effective_density(&stores, config.cluster.gamma, config.cluster.cutoff_km)?;
    let peaks = find_peaks_with_floor(&field, &stores, config.cluster.peak_radius_km, config.cluster.min_peak_score)?;
    let partition = if peaks.is_empty() {
        ClusterPartition {
            clusters: Vec::new(),
            unassigned: stores.iter().map(|s| s.store_id.clone()).collect(),
        }
    } else {
        detect_clusters(&stores, &config.cluster)?.1
    };
    let index: HashMap<&str, usize> = stores.iter().enumerate().map(|(i, s)| (s.store_id.as_str(), i)).collect();
    let mut best: Vec<Option<(usize, usize)>> = vec![None; config.n_peaks];
    for cl in &partition.clusters {
        let mut votes = vec![0usize; config.n_peaks];
        for m in &cl.members {
            votes[store_peak[index[m.as_str()]]] += 1;
        }
        let (k, n) = votes.iter().enumerate().fold((0, 0), |acc, (k, &n)| if n > acc.1 { (k, n) } else { acc });
        if n > 0 && best[k].is_none_or(|(_, prev)| n > prev) {
            best[k] = Some((cl.cluster_id, n));
        }
    }
    let peak_cluster: Vec<Option<usize>> = best.iter().map(|b| b.map(|(c, _)| c)).collect();

    let mut rng = stream_rng(config.seed, STREAM_PROFILES);
    let mut profiles = Vec::new();
    let mut planted_types = BTreeMap::new();
    let mut matched: Vec<(usize, usize)> = peak_cluster
        .iter()
        .enumerate()
        .filter_map(|(k, c)| c.map(|c| (c, k)))
        .collect();
    matched.sort();
    for (c, k) in matched {
        let a = k % ARCHETYPES.len();
        let mut v = [0.0; 3];
        for (d, slot) in v.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *slot = (ARCHETYPES[a][d] * (1.0 + config.profile_noise * z)).max(0.0);
        }
        profiles.push(ClusterProfile {
            cluster_id: c,
            floating_density: v[0],
            working_density: v[1],
            residential_density: v[2],
        });
        planted_types.insert(c, (b'A' + a as u8) as char);
    }

    Ok(World {
        stores,
        store_peak,
        peaks: peak_xy.iter().map(|&(x, y)| frame.geo(x, y)).collect(),
        registry,
        partition,
        peak_cluster,
        residence_cells,
        dest_cells,
        background_cell,
        profiles,
        planted_types,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPeak {
    pub peak: usize,
    pub location: GeoPoint,
    pub cluster_id: Option<usize>,
    pub planted_type: char,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedProximity {
    pub analytic_within: f64,
    pub analytic_cross: Option<f64>,
    pub realized_within: f64,
    pub realized_cross: Option<f64>,
    pub n_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceYear {
    pub year: u16,
    /// Active (cluster, amenity) pairs.
    pub active: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingReport {
    pub max_abs_log_error: f64,
    pub mean_abs_log_error: f64,
    pub n_zero_counts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub generator_version: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub peaks: Vec<PlantedPeak>,
    pub store_peak: BTreeMap<String, usize>,
    pub blocks: Vec<Vec<String>>,
    pub proximity: PlantedProximity,
    pub truth: RegressionTruth,
    pub presence: Vec<PresenceYear>,
    /// Dense-panel moments used to standardize the planted regressors.
    pub omega_moments: Moments,
    pub log_dist_moments: Moments,
    pub rounding: RoundingReport,
    /// Presence entries whose RCA flips once local purchases are added.
    pub presence_flips: usize,
    pub n_records: usize,
    pub n_baseline_records: usize,
    pub n_background_records: usize,
}

impl GroundTruthManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = crate::table::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line() as u64,
            column: format!("char {}", e.column()),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub world: World,
    pub records: Vec<TransactionRecord>,
    pub manifest: GroundTruthManifest,
}

fn demographic(d: usize) -> (&'static str, &'static str) {
    (AGE_BANDS[d / GENDERS.len()], GENDERS[d % GENDERS.len()])
}

struct Baseline {
    records: Vec<TransactionRecord>,
    mapped: Vec<MappedRecord>,
    n_groups: usize,
}

fn gen_baseline(world: &World, config: &SynthConfig, cluster_of_peak: &[usize]) -> Baseline {
    let amenities = config.amenities();
    let n_demo = AGE_BANDS.len() * GENDERS.len();
    let per_cell: Vec<(Vec<TransactionRecord>, Vec<MappedRecord>, usize)> = world
        .residence_cells
        .par_iter()
        .enumerate()
        .map(|(idx, (cell, home))| {
            let mut rng = stream_rng(config.seed, STREAM_BASELINE + idx as u64);
            let mut recs = Vec::new();
            let mut mapped = Vec::new();
            let mut groups = 0;
            for d in 0..n_demo {
                let (age, gender) = demographic(d);
                let mut areas = vec![*home];
                let others: Vec<usize> = (0..config.n_peaks).filter(|k| k != home).collect();
                for i in sample(&mut rng, others.len(), config.shopping_areas - 1) {
                    areas.push(others[i]);
                }
                for &area in &areas {
                    groups += 1;
                    let block = rng.random_range(0..config.n_blocks);
                    let active: Vec<usize> = (0..config.n_amenities)
                        .filter(|&p| {
                            let q = if config.block_of(p) == block {
                                config.within_block_prob
                            } else {
                                config.cross_block_prob
                            };
                            rng.random_bool(q)
                        })
                        .collect();
                    for &year in &config.baseline_years {
                        for &p in &active {
                            let count = rng.random_range(BASELINE_COUNTS.0..=BASELINE_COUNTS.1);
                            let period = Period { year, month: REGRESSION_MONTH };
                            recs.push(TransactionRecord {
                                period,
                                res_cell: cell.clone(),
                                dest_cell: world.dest_cells[area].clone(),
                                amenity: amenities[p].clone(),
                                age_band: age.to_string(),
                                gender: gender.to_string(),
                                count,
                                amount: count as f64 * 15.0,
                            });
                            mapped.push(MappedRecord {
                                period,
                                res_cell: cell.clone(),
                                res_cluster: Some(cluster_of_peak[*home]),
                                dest_cluster: cluster_of_peak[area],
                                amenity: amenities[p].clone(),
                                age_band: age.to_string(),
                                gender: gender.to_string(),
                                count,
                            });
                        }
                    }
                }
            }
            (recs, mapped, groups)
        })
        .collect();
    let mut out = Baseline {
        records: Vec::new(),
        mapped: Vec::new(),
        n_groups: 0,
    };
    for (r, m, g) in per_cell {
        out.records.extend(r);
        out.mapped.extend(m);
        out.n_groups += g;
    }
    out
}

/// Planted cluster by amenity presence for each regression year, indexed
/// by detected cluster id.
fn gen_presence(config: &SynthConfig, years: &[u16], n: usize, m: usize) -> Vec<DMatrix<bool>> {
    let mut rng = stream_rng(config.seed, STREAM_PRESENCE);
    let mut out: Vec<DMatrix<bool>> = Vec::with_capacity(years.len());
    for t in 0..years.len() {
        let mut x = DMatrix::from_fn(n, m, |i, p| {
            let fresh = rng.random_bool(config.presence_prob);
            if t > 0 && rng.random_bool(config.presence_persistence) {
                out[t - 1][(i, p)]
            } else {
                fresh
            }
        });
        let row_sum = |x: &DMatrix<bool>, i: usize| (0..m).filter(|&p| x[(i, p)]).count();
        let col_sum = |x: &DMatrix<bool>, p: usize| (0..n).filter(|&i| x[(i, p)]).count();
        for i in 0..n {
            if row_sum(&x, i) == 0 {
                let p = (0..m).min_by_key(|&p| (col_sum(&x, p), p)).unwrap();
                x[(i, p)] = true;
            }
        }
        for p in 0..m {
            if col_sum(&x, p) == 0 {
                let i = (0..n).min_by_key(|&i| (row_sum(&x, i), i)).unwrap();
                x[(i, p)] = true;
            }
        }
        // With equal volumes an active entry has RCA = M / (m_i k_p).
        loop {
            let rows: Vec<usize> = (0..n).map(|i| row_sum(&x, i)).collect();
            let cols: Vec<usize> = (0..m).map(|p| col_sum(&x, p)).collect();
            let total: usize = rows.iter().sum();
            let worst = (0..n)
                .flat_map(|i| (0..m).map(move |p| (i, p)))
                .filter(|&(i, p)| x[(i, p)] && rows[i] > 1 && cols[p] > 1)
                .max_by_key(|&(i, p)| (rows[i] * cols[p], std::cmp::Reverse((i, p))));
            match worst {
                Some((i, p)) if (total as f64) < PRESENCE_MARGIN * (rows[i] * cols[p]) as f64 => x[(i, p)] = false,
                _ => break,
            }
        }
        out.push(x);
    }
    out
}

fn rca_binary(values: DMatrix<f64>, amenities: &[String]) -> Result<DMatrix<bool>> {
    let rows = (0..values.nrows()).map(|i| i.to_string()).collect();
    let counts = CountMatrix::new(rows, amenities.to_vec(), values)?;
    Ok(rca(&counts).binary)
}

pub fn gen_transactions(world: &World, config: &SynthConfig) -> Result<(Vec<TransactionRecord>, GroundTruthManifest)> {
    config.validate()?;
    let n = config.n_peaks;
    if world.partition.clusters.len() != n || world.peak_cluster.iter().any(Option::is_none) {
        return Err(Error::Config(format!(
            "detected {} clusters ({} matched) for {n} planted peaks; transactions need a one-to-one match",
            world.partition.clusters.len(),
            world.peak_cluster.iter().flatten().count()
        )));
    }
    let cluster_of_peak: Vec<usize> = world.peak_cluster.iter().map(|c| c.unwrap()).collect();
    let mut peak_of_cluster = vec![0; n];
    for (k, &c) in cluster_of_peak.iter().enumerate() {
        peak_of_cluster[c] = k;
    }

    let cell_map = cell_cluster_map(&world.partition, &world.stores, &world.registry, HALF_MILE_KM)?;
    let expected = world.residence_cells.iter().map(|(c, k)| (c, *k));
    for (cell, k) in expected.chain(world.dest_cells.iter().zip(0..)) {
        if cell_map.get(cell) != Some(&cluster_of_peak[k]) {
            return Err(Error::Config(format!("cell {cell} does not map to the cluster of peak {k}")));
        }
    }
    if cell_map.contains_key(&world.background_cell) {
        return Err(Error::Config("background cell falls inside a cluster".into()));
    }

    let amenities = config.amenities();
    let m = amenities.len();
    let years = config.periods.all_years();

    let baseline = gen_baseline(world, config, &cluster_of_peak);
    let groups = group_count_matrix(&baseline.mapped, &config.baseline_years, GroupScope::WithShoppingArea)?;
    if groups.cols() != amenities.as_slice() {
        return Err(Error::Config("some amenity is never purchased in the baseline years".into()));
    }
    let phi = proximity(&rca(&groups))?;

    let presence = gen_presence(config, &years, n, m);
    let bg = config.background_count as f64;
    let planted: Vec<DMatrix<bool>> = presence
        .iter()
        .map(|x| rca_binary(x.map(|a| if a { bg } else { 0.0 }), &amenities))
        .collect::<Result<_>>()?;
    let omega: Vec<DMatrix<f64>> = planted
        .iter()
        .map(|x| {
            let rows = (0..n).map(|i| i.to_string()).collect();
            relatedness_from_binary(rows, &amenities, x, &phi).map(|r| r.omega)
        })
        .collect::<Result<_>>()?;

    let distances = ClusterDistances::from_partition(&world.partition);
    let mut omega_vals = Vec::with_capacity(years.len() * n * n * m);
    for w in &omega {
        for i in 0..n {
            for _ in 0..n {
                for p in 0..m {
                    omega_vals.push(w[(i, p)]);
                }
            }
        }
    }
    let omega_moments = Moments::of(omega_vals.iter().copied());
    let log_dist_moments = Moments::of((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
        (distances.get(i, j) + config.delta_km).ln()
    }));
    let std_or_zero = |mo: &Moments, v: f64| if mo.sd > 0.0 { mo.standardize(v) } else { 0.0 };

    let t = config.truth;
    let mut rng = stream_rng(config.seed, STREAM_EFFECTS);
    let mut draw = |k: usize| -> Vec<f64> {
        (0..k)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                t.fe_sd * z
            })
            .collect()
    };
    let fe_dest = draw(n);
    let fe_res = draw(n);
    let fe_amenity = draw(m);
    let fe_year = draw(years.len());

    let res_cell_of_peak: Vec<&CellId> = (0..n)
        .map(|k| &world.residence_cells.iter().find(|(_, p)| *p == k).unwrap().0)
        .collect();
    let n_demo = AGE_BANDS.len() * GENDERS.len();
    type Chunk = (Vec<TransactionRecord>, f64, f64, usize);
    let chunks: Vec<Chunk> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(config.noise_seed.unwrap_or(config.seed), STREAM_COUNTS + j as u64);
            let res_cell = res_cell_of_peak[peak_of_cluster[j]];
            let (mut recs, mut max_err, mut sum_err, mut zeros) = (Vec::new(), 0.0f64, 0.0, 0);
            for (ti, &year) in years.iter().enumerate() {
                let group = config.periods.group_of(year);
                let covid = f64::from(u8::from(group == Some(PeriodGroup::Covid)));
                let recovery = f64::from(u8::from(group == Some(PeriodGroup::Recovery)));
                for i in 0..n {
                    let l = std_or_zero(&log_dist_moments, (distances.get(i, j) + config.delta_km).ln());
                    for p in 0..m {
                        let w = std_or_zero(&omega_moments, omega[ti][(i, p)]);
                        let z: f64 = rng.sample(StandardNormal);
                        let eta = t.intercept
                            + t.beta_omega * w
                            + t.beta_dist * l
                            + t.beta_int * w * l
                            + t.beta_covid * covid * w
                            + t.beta_recovery * recovery * w
                            + fe_dest[i]
                            + fe_res[j]
                            + fe_amenity[p]
                            + fe_year[ti]
                            + t.noise_sd * z;
                        let count = (eta.exp() - 1.0).round_ties_even().max(0.0);
                        let err = ((count).ln_1p() - eta).abs();
                        max_err = max_err.max(err);
                        sum_err += err;
                        if count == 0.0 {
                            zeros += 1;
                            continue;
                        }
                        let count = count as u64;
                        let (age, gender) = demographic((i + p) % n_demo);
                        recs.push(TransactionRecord {
                            period: Period { year, month: REGRESSION_MONTH },
                            res_cell: res_cell.clone(),
                            dest_cell: world.dest_cells[peak_of_cluster[i]].clone(),
                            amenity: amenities[p].clone(),
                            age_band: age.to_string(),
                            gender: gender.to_string(),
                            count,
                            amount: count as f64 * 15.0,
                        });
                    }
                }
            }
            (recs, max_err, sum_err, zeros)
        })
        .collect();
    let mut local = Vec::new();
    let mut rounding = RoundingReport {
        max_abs_log_error: 0.0,
        mean_abs_log_error: 0.0,
        n_zero_counts: 0,
    };
    for (recs, max_err, sum_err, zeros) in chunks {
        local.extend(recs);
        rounding.max_abs_log_error = rounding.max_abs_log_error.max(max_err);
        rounding.mean_abs_log_error += sum_err;
        rounding.n_zero_counts += zeros;
    }
    rounding.mean_abs_log_error /= (years.len() * n * n * m) as f64;

    let mut background = Vec::new();
    for (ti, &year) in years.iter().enumerate() {
        for i in 0..n {
            for p in 0..m {
                if presence[ti][(i, p)] {
                    background.push(TransactionRecord {
                        period: Period { year, month: REGRESSION_MONTH },
                        res_cell: world.background_cell.clone(),
                        dest_cell: world.dest_cells[peak_of_cluster[i]].clone(),
                        amenity: amenities[p].clone(),
                        age_band: AGE_BANDS[2].to_string(),
                        gender: GENDERS[0].to_string(),
                        count: config.background_count,
                        amount: config.background_count as f64 * 15.0,
                    });
                }
            }
        }
    }

    // Cluster-level presence once local purchases are added.
    let mut presence_flips = 0;
    for (ti, &year) in years.iter().enumerate() {
        let mut values = DMatrix::<f64>::zeros(n, m);
        let idx: HashMap<&str, usize> = amenities.iter().enumerate().map(|(p, a)| (a.as_str(), p)).collect();
        for r in local.iter().chain(&background).filter(|r| r.period.year == year) {
            let i = cell_map[&r.dest_cell];
            values[(i, idx[r.amenity.as_str()])] += r.count as f64;
        }
        let realized = rca_binary(values, &amenities)?;
        presence_flips += realized.iter().zip(planted[ti].iter()).filter(|(a, b)| a != b).count();
    }

    let (analytic_within, analytic_cross) = config.analytic_phi();
    let (mut within, mut cross) = ((0.0, 0usize), (0.0, 0usize));
    for a in 0..m {
        for b in a + 1..m {
            let slot = if config.block_of(a) == config.block_of(b) { &mut within } else { &mut cross };
            slot.0 += phi.phi[(a, b)];
            slot.1 += 1;
        }
    }

    let n_baseline_records = baseline.records.len();
    let n_background_records = background.len();
    let mut records = baseline.records;
    records.extend(local);
    records.extend(background);
    records.sort_by(|a, b| {
        (a.period, &a.res_cell, &a.dest_cell, &a.amenity, &a.age_band, &a.gender)
            .cmp(&(b.period, &b.res_cell, &b.dest_cell, &b.amenity, &b.age_band, &b.gender))
    });

    let manifest = GroundTruthManifest {
        generator_version: GENERATOR_VERSION.to_string(),
        seed: config.seed,
        config: config.clone(),
        peaks: world
            .peaks
            .iter()
            .enumerate()
            .map(|(k, &location)| PlantedPeak {
                peak: k,
                location,
                cluster_id: world.peak_cluster[k],
                planted_type: (b'A' + (k % ARCHETYPES.len()) as u8) as char,
            })
            .collect(),
        store_peak: world
            .stores
            .iter()
            .zip(&world.store_peak)
            .map(|(s, &k)| (s.store_id.clone(), k))
            .collect(),
        blocks: config.blocks(),
        proximity: PlantedProximity {
            analytic_within,
            analytic_cross,
            realized_within: within.0 / within.1.max(1) as f64,
            realized_cross: (cross.1 > 0).then(|| cross.0 / cross.1 as f64),
            n_groups: baseline.n_groups,
        },
        truth: t,
        presence: years
            .iter()
            .zip(&planted)
            .map(|(&year, x)| PresenceYear {
                year,
                active: (0..n)
                    .flat_map(|i| (0..m).map(move |p| (i, p)))
                    .filter(|&(i, p)| x[(i, p)])
                    .map(|(i, p)| (i, amenities[p].clone()))
                    .collect(),
            })
            .collect(),
        omega_moments,
        log_dist_moments,
        rounding,
        presence_flips,
        n_records: records.len(),
        n_baseline_records,
        n_background_records,
    };
    Ok((records, manifest))
}

/// Planted relatedness density for each regression year, rebuilt from a
/// manifest and the proximity matrix.
pub fn planted_omega(manifest: &GroundTruthManifest, prox: &ProximityMatrix) -> Result<BTreeMap<u16, DMatrix<f64>>> {
    let n = manifest.config.n_peaks;
    let idx: HashMap<&str, usize> = prox.labels.iter().enumerate().map(|(p, a)| (a.as_str(), p)).collect();
    let mut out = BTreeMap::new();
    for year in &manifest.presence {
        let mut x = DMatrix::from_element(n, prox.len(), false);
        for (i, a) in &year.active {
            let p = *idx.get(a.as_str()).ok_or_else(|| Error::MissingKey(format!("amenity {a} in proximity")))?;
            x[(*i, p)] = true;
        }
        let rows = (0..n).map(|i| i.to_string()).collect();
        out.insert(year.year, relatedness_from_binary(rows, &prox.labels, &x, prox)?.omega);
    }
    Ok(out)
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    let world = gen_world(config)?;
    let (records, manifest) = gen_transactions(&world, config)?;
    Ok(SynthData {
        world,
        records,
        manifest,
    })
}

impl SynthData {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_stores(&dir.join(STORES_FILE), &self.world.stores)?;
        self.world.registry.write_csv(&dir.join(CELLS_FILE))?;
        write_profiles(&dir.join(PROFILES_FILE), &self.world.profiles)?;
        write_transactions(&dir.join(TRANSACTIONS_FILE), &self.records)?;
        crate::table::write_text(&dir.join(MANIFEST_FILE), &(self.manifest.to_json()? + "\n"))
    }
}
