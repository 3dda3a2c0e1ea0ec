//! Transaction ingestion, cell-to-cluster mapping, relatedness tables and the
//! (destination, residence, amenity, year) regression panel.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clusters::{ClusterPartition, StorePoint, HALF_MILE_KM};
use crate::complexity::{rca, relatedness_from_binary, CountMatrix, ProximityMatrix};
use crate::error::{Error, Result};
use crate::geo::{haversine_unchecked, CellId, CellRegistry, GeoPoint, SpatialIndex};
use crate::table::{Table, TableWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub year: u16,
    pub month: u8,
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("period `{s}` is not YYYY-MM"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: u16 = y.parse().map_err(|_| bad())?;
        let month: u8 = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(Period { year, month })
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodGroup {
    PreCovid,
    Covid,
    Recovery,
}

impl PeriodGroup {
    pub const ALL: [PeriodGroup; 3] = [PeriodGroup::PreCovid, PeriodGroup::Covid, PeriodGroup::Recovery];

    pub fn name(self) -> &'static str {
        match self {
            PeriodGroup::PreCovid => "pre_covid",
            PeriodGroup::Covid => "covid",
            PeriodGroup::Recovery => "recovery",
        }
    }
}

/// Years belonging to each period group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeriodGroups {
    pub pre_covid: Vec<u16>,
    pub covid: Vec<u16>,
    pub recovery: Vec<u16>,
}

impl Default for PeriodGroups {
    fn default() -> Self {
        PeriodGroups {
            pre_covid: vec![2019],
            covid: vec![2020, 2021, 2022],
            recovery: vec![2023],
        }
    }
}

impl PeriodGroups {
    pub fn years(&self, group: PeriodGroup) -> &[u16] {
        match group {
            PeriodGroup::PreCovid => &self.pre_covid,
            PeriodGroup::Covid => &self.covid,
            PeriodGroup::Recovery => &self.recovery,
        }
    }

    pub fn group_of(&self, year: u16) -> Option<PeriodGroup> {
        PeriodGroup::ALL.into_iter().find(|g| self.years(*g).contains(&year))
    }

    /// All grouped years in ascending order.
    pub fn all_years(&self) -> Vec<u16> {
        let set: BTreeSet<u16> = PeriodGroup::ALL
            .iter()
            .flat_map(|g| self.years(*g).iter().copied())
            .collect();
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for g in PeriodGroup::ALL {
            for y in self.years(g) {
                if !seen.insert(*y) {
                    return Err(Error::Config(format!("year {y} appears in more than one period group")));
                }
            }
        }
        if seen.is_empty() {
            return Err(Error::Config("period groups are empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransactionRecord {
    pub period: Period,
    pub res_cell: CellId,
    pub dest_cell: CellId,
    pub amenity: String,
    pub age_band: String,
    pub gender: String,
    pub count: u64,
    pub amount: f64,
}

pub const TRANSACTION_HEADERS: [&str; 8] = [
    "period",
    "res_cell",
    "dest_cell",
    "amenity_small",
    "age_band",
    "gender",
    "count",
    "amount",
];

pub fn read_transactions(path: &Path) -> Result<Vec<TransactionRecord>> {
    let table = Table::read(path, &TRANSACTION_HEADERS)?;
    let mut out = Vec::with_capacity(table.len());
    for row in table.rows() {
        let period: Period = row
            .str("period")?
            .parse()
            .map_err(|e: Error| row.error("period", e.to_string()))?;
        let amount = row.float("amount")?;
        if amount < 0.0 {
            return Err(row.error("amount", "must be nonnegative"));
        }
        out.push(TransactionRecord {
            period,
            res_cell: CellId::new(row.str("res_cell")?).map_err(|e| row.error("res_cell", e.to_string()))?,
            dest_cell: CellId::new(row.str("dest_cell")?).map_err(|e| row.error("dest_cell", e.to_string()))?,
            amenity: row.str("amenity_small")?.to_string(),
            age_band: row.str("age_band")?.to_string(),
            gender: row.str("gender")?.to_string(),
            count: row.parse("count")?,
            amount,
        });
    }
    Ok(out)
}

pub fn write_transactions(path: &Path, records: &[TransactionRecord]) -> Result<()> {
    let mut w = TableWriter::create(path, &TRANSACTION_HEADERS)?;
    for r in records {
        w.row([
            r.period.to_string(),
            r.res_cell.to_string(),
            r.dest_cell.to_string(),
            r.amenity.clone(),
            r.age_band.clone(),
            r.gender.clone(),
            r.count.to_string(),
            r.amount.to_string(),
        ])?;
    }
    w.finish()
}

/// A transaction with its destination resolved to a cluster. Residences
/// outside every cluster keep `res_cluster = None`; such purchases still
/// count toward the destination's amenity mix.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedRecord {
    pub period: Period,
    pub res_cell: CellId,
    pub res_cluster: Option<usize>,
    pub dest_cluster: usize,
    pub amenity: String,
    pub age_band: String,
    pub gender: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub n_records: usize,
    pub n_cells: usize,
    pub n_cells_unmapped: usize,
    /// Records dropped because the destination cell maps to no cluster.
    pub dropped_dest: usize,
    /// Records kept for amenity mixes but excluded from flows and the panel.
    pub unmapped_residence: usize,
    pub dropped_count_total: u64,
}

/// Maps every registered cell to the cluster of its nearest assigned store
/// within `max_km`. Cells with no such store are absent from the map.
pub fn cell_cluster_map(
    partition: &ClusterPartition,
    stores: &[StorePoint],
    registry: &CellRegistry,
    max_km: f64,
) -> Result<BTreeMap<CellId, usize>> {
    let membership = partition.membership();
    if membership.is_empty() {
        return Err(Error::invalid("cluster membership is empty"));
    }
    let mut assigned: Vec<(&StorePoint, usize)> = stores
        .iter()
        .filter_map(|s| membership.get(&s.store_id).map(|&c| (s, c)))
        .collect();
    if assigned.is_empty() {
        return Err(Error::invalid("no store in the membership table appears in the store list"));
    }
    assigned.sort_by(|a, b| a.0.store_id.cmp(&b.0.store_id));
    let index = SpatialIndex::build(assigned.iter().map(|(s, _)| s.location).collect(), max_km.max(0.05))?;
    let mut out = BTreeMap::new();
    for (id, p) in registry.iter() {
        if let Some((k, _)) = index.nearest_within(*p, max_km)? {
            out.insert(id.clone(), assigned[k].1);
        }
    }
    Ok(out)
}

pub fn map_cells_to_clusters(
    records: &[TransactionRecord],
    partition: &ClusterPartition,
    stores: &[StorePoint],
    registry: &CellRegistry,
) -> Result<(Vec<MappedRecord>, MappingReport)> {
    let cell_map = cell_cluster_map(partition, stores, registry, HALF_MILE_KM)?;
    let mut report = MappingReport {
        n_records: records.len(),
        n_cells: registry.len(),
        n_cells_unmapped: registry.len() - cell_map.len(),
        ..MappingReport::default()
    };
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        for cell in [&r.res_cell, &r.dest_cell] {
            if !registry.contains(cell) {
                return Err(Error::MissingKey(format!("cell {cell} not in registry")));
            }
        }
        let Some(&dest) = cell_map.get(&r.dest_cell) else {
            report.dropped_dest += 1;
            report.dropped_count_total += r.count;
            continue;
        };
        let res = cell_map.get(&r.res_cell).copied();
        if res.is_none() {
            report.unmapped_residence += 1;
        }
        out.push(MappedRecord {
            period: r.period,
            res_cell: r.res_cell.clone(),
            res_cluster: res,
            dest_cluster: dest,
            amenity: r.amenity.clone(),
            age_band: r.age_band.clone(),
            gender: r.gender.clone(),
            count: r.count,
        });
    }
    Ok((out, report))
}

/// Great-circle distances between cluster centroids; zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDistances {
    km: DMatrix<f64>,
}

impl ClusterDistances {
    pub fn from_centroids(centroids: &[GeoPoint]) -> Self {
        let n = centroids.len();
        let km = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                haversine_unchecked(centroids[i], centroids[j])
            }
        });
        ClusterDistances { km }
    }

    pub fn from_partition(partition: &ClusterPartition) -> Self {
        let centroids: Vec<GeoPoint> = partition.clusters.iter().map(|c| c.centroid).collect();
        Self::from_centroids(&centroids)
    }

    pub fn len(&self) -> usize {
        self.km.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.km.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.km[(i, j)]
    }
}

/// How consumer groups are keyed when estimating proximity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupScope {
    /// Residence cell, age band, gender and shopping cluster.
    #[default]
    WithShoppingArea,
    /// Residence cell, age band and gender only.
    ResidenceDemographic,
}

/// Consumer-group by amenity counts over the given years.
pub fn group_count_matrix(records: &[MappedRecord], years: &[u16], scope: GroupScope) -> Result<CountMatrix> {
    let triples = records
        .iter()
        .filter(|r| years.contains(&r.period.year))
        .map(|r| {
            let mut key = format!("{}|{}|{}", r.res_cell, r.age_band, r.gender);
            if scope == GroupScope::WithShoppingArea {
                key.push('|');
                key.push_str(&r.dest_cluster.to_string());
            }
            (key, r.amenity.clone(), r.count)
        });
    CountMatrix::from_triples(triples, None)
}

/// Destination-cluster by amenity counts for one year. Returns `None` when
/// no record falls in the year.
pub fn cluster_count_matrix(records: &[MappedRecord], year: u16, amenities: &[String]) -> Result<Option<CountMatrix>> {
    let known: BTreeSet<&String> = amenities.iter().collect();
    let triples: Vec<(String, String, u64)> = records
        .iter()
        .filter(|r| r.period.year == year && known.contains(&r.amenity))
        .map(|r| (r.dest_cluster.to_string(), r.amenity.clone(), r.count))
        .collect();
    if triples.iter().all(|t| t.2 == 0) {
        return Ok(None);
    }
    CountMatrix::from_triples(triples, Some(amenities)).map(Some)
}

/// Relatedness density by (cluster, amenity, year).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OmegaTable {
    values: BTreeMap<(usize, String, u16), f64>,
}

impl OmegaTable {
    pub fn get(&self, cluster: usize, amenity: &str, year: u16) -> Option<f64> {
        self.values.get(&(cluster, amenity.to_string(), year)).copied()
    }

    pub fn insert(&mut self, cluster: usize, amenity: &str, year: u16, omega: f64) {
        self.values.insert((cluster, amenity.to_string(), year), omega);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, u16, f64)> {
        self.values.iter().map(|((c, a, y), v)| (*c, a.as_str(), *y, *v))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = TableWriter::create(path, &["cluster_id", "amenity", "period", "omega"])?;
        for (c, a, y, v) in self.iter() {
            w.row([c.to_string(), a.to_string(), y.to_string(), v.to_string()])?;
        }
        w.finish()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = Table::read(path, &["cluster_id", "amenity", "period", "omega"])?;
        let mut out = OmegaTable::default();
        for row in table.rows() {
            let omega = row.float("omega")?;
            if !(0.0..=1.0).contains(&omega) {
                return Err(row.error("omega", format!("{omega} outside [0, 1]")));
            }
            out.insert(row.parse("cluster_id")?, row.str("amenity")?, row.parse("period")?, omega);
        }
        Ok(out)
    }
}

/// Relatedness density of every cluster and amenity in each year, using
/// cluster-level RCA > 1 as presence. Clusters without purchases in a year
/// get zero.
pub fn compute_omega(records: &[MappedRecord], n_clusters: usize, prox: &ProximityMatrix, years: &[u16]) -> Result<OmegaTable> {
    let mut table = OmegaTable::default();
    for &year in years {
        let counts = cluster_count_matrix(records, year, &prox.labels)?;
        let mut binary = DMatrix::from_element(n_clusters, prox.len(), false);
        if let Some(counts) = counts {
            let spec = rca(&counts);
            for (r, label) in spec.rows.iter().enumerate() {
                let c: usize = label.parse().expect("cluster labels are integers");
                if c >= n_clusters {
                    return Err(Error::invalid(format!("cluster {c} outside 0..{n_clusters}")));
                }
                for p in 0..prox.len() {
                    binary[(c, p)] = spec.binary[(r, p)];
                }
            }
        }
        let rows: Vec<String> = (0..n_clusters).map(|c| c.to_string()).collect();
        let omega = relatedness_from_binary(rows, &prox.labels, &binary, prox)?;
        for c in 0..n_clusters {
            for (p, a) in prox.labels.iter().enumerate() {
                table.insert(c, a, year, omega.omega[(c, p)]);
            }
        }
    }
    Ok(table)
}

/// Distance bands with left-open, right-closed boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Interval {
    Zero,
    UpTo1,
    UpTo2,
    UpTo5,
    UpTo10,
    UpTo20,
    Beyond20,
}

impl Interval {
    pub const ALL: [Interval; 7] = [
        Interval::Zero,
        Interval::UpTo1,
        Interval::UpTo2,
        Interval::UpTo5,
        Interval::UpTo10,
        Interval::UpTo20,
        Interval::Beyond20,
    ];

    pub fn of(distance_km: f64) -> Interval {
        match distance_km {
            d if d <= 0.0 => Interval::Zero,
            d if d <= 1.0 => Interval::UpTo1,
            d if d <= 2.0 => Interval::UpTo2,
            d if d <= 5.0 => Interval::UpTo5,
            d if d <= 10.0 => Interval::UpTo10,
            d if d <= 20.0 => Interval::UpTo20,
            _ => Interval::Beyond20,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Interval::Zero => "0",
            Interval::UpTo1 => "(0,1]",
            Interval::UpTo2 => "(1,2]",
            Interval::UpTo5 => "(2,5]",
            Interval::UpTo10 => "(5,10]",
            Interval::UpTo20 => "(10,20]",
            Interval::Beyond20 => ">20",
        }
    }

    /// Identifier used in regression spec names.
    pub fn slug(self) -> &'static str {
        match self {
            Interval::Zero => "0",
            Interval::UpTo1 => "0_1",
            Interval::UpTo2 => "1_2",
            Interval::UpTo5 => "2_5",
            Interval::UpTo10 => "5_10",
            Interval::UpTo20 => "10_20",
            Interval::Beyond20 => "20plus",
        }
    }

    pub fn from_label(s: &str) -> Option<Interval> {
        Interval::ALL.into_iter().find(|i| i.label() == s || i.slug() == s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogMode {
    /// `log(1 + count)`, zeros kept.
    #[default]
    Log1p,
    /// `log(count)`, zero counts dropped.
    PositiveOnly,
}

impl LogMode {
    pub fn name(self) -> &'static str {
        match self {
            LogMode::Log1p => "log1p",
            LogMode::PositiveOnly => "positive_only",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelScope {
    /// Every destination, residence, amenity and year combination.
    #[default]
    Dense,
    /// Only combinations with at least one record.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelConfig {
    pub log_mode: LogMode,
    pub scope: PanelScope,
    pub delta_km: f64,
    pub periods: PeriodGroups,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            log_mode: LogMode::Log1p,
            scope: PanelScope::Dense,
            delta_km: 0.025,
            periods: PeriodGroups::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelRow {
    pub dest: usize,
    pub res: usize,
    pub amenity: String,
    pub year: u16,
    pub count: u64,
    pub log_count: f64,
    pub omega: f64,
    pub distance_km: f64,
    pub log_dist: f64,
    pub interval: Interval,
    pub covid: bool,
    pub recovery: bool,
    pub y: f64,
    pub omega_std: f64,
    pub log_dist_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    /// Mean and sample standard deviation (n - 1 denominator).
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Moments {
        let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        let mean = sum / n as f64;
        let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        Moments { mean, sd }
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationReport {
    pub sample: String,
    pub n: usize,
    pub log_mode: String,
    pub variables: BTreeMap<String, Moments>,
}

impl StandardizationReport {
    pub fn moments(&self, var: &str) -> Result<Moments> {
        self.variables
            .get(var)
            .copied()
            .ok_or_else(|| Error::MissingKey(format!("standardization moments for `{var}`")))
    }
}

/// Recomputes `y`, `omega_std` and (optionally) `log_dist_std` on `rows`.
pub fn standardize(
    rows: &mut [PanelRow],
    sample: &str,
    log_mode: LogMode,
    with_distance: bool,
) -> Result<StandardizationReport> {
    if rows.is_empty() {
        return Err(Error::invalid(format!("sample `{sample}` has no rows")));
    }
    let mut variables = BTreeMap::new();
    let y = Moments::of(rows.iter().map(|r| r.log_count));
    let omega = Moments::of(rows.iter().map(|r| r.omega));
    variables.insert("y".to_string(), y);
    variables.insert("omega".to_string(), omega);
    let dist = with_distance.then(|| Moments::of(rows.iter().map(|r| r.log_dist)));
    if let Some(d) = dist {
        variables.insert("log_dist".to_string(), d);
    }
    for (name, m) in &variables {
        // Accumulated rounding leaves a constant column with sd near 1e-16.
        if !m.sd.is_finite() || m.sd <= 1e-12 * m.mean.abs().max(1.0) {
            return Err(Error::DegenerateSample(format!(
                "`{name}` has zero variance in sample `{sample}` ({} rows)",
                rows.len()
            )));
        }
    }
    for r in rows.iter_mut() {
        r.y = y.standardize(r.log_count);
        r.omega_std = omega.standardize(r.omega);
        r.log_dist_std = dist.map_or(0.0, |d| d.standardize(r.log_dist));
    }
    Ok(StandardizationReport {
        sample: sample.to_string(),
        n: rows.len(),
        log_mode: log_mode.name().to_string(),
        variables,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub rows: Vec<PanelRow>,
    pub report: StandardizationReport,
}

/// Canonical row order used everywhere a panel is materialised.
pub fn sort_rows(rows: &mut [PanelRow]) {
    rows.sort_by(|a, b| {
        (a.year, a.dest, a.res, &a.amenity).cmp(&(b.year, b.dest, b.res, &b.amenity))
    });
}

pub fn build_panel(
    records: &[MappedRecord],
    omega: &OmegaTable,
    distances: &ClusterDistances,
    amenities: &[String],
    config: &PanelConfig,
) -> Result<Panel> {
    require_delta(config.delta_km)?;
    config.periods.validate()?;
    let years = config.periods.all_years();
    let n = distances.len();
    let amenity_idx: HashMap<&str, usize> = amenities.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();

    let mut counts: BTreeMap<(u16, usize, usize, usize), u64> = BTreeMap::new();
    for r in records {
        let Some(res) = r.res_cluster else { continue };
        if !years.contains(&r.period.year) {
            continue;
        }
        let Some(&p) = amenity_idx.get(r.amenity.as_str()) else { continue };
        if r.dest_cluster >= n || res >= n {
            return Err(Error::invalid(format!("cluster id outside 0..{n}")));
        }
        *counts.entry((r.period.year, r.dest_cluster, res, p)).or_insert(0) += r.count;
    }

    let make_row = |year: u16, i: usize, j: usize, p: usize, count: u64| -> Result<Option<PanelRow>> {
        let log_count = match config.log_mode {
            LogMode::Log1p => (count as f64).ln_1p(),
            LogMode::PositiveOnly if count == 0 => return Ok(None),
            LogMode::PositiveOnly => (count as f64).ln(),
        };
        let amenity = &amenities[p];
        let w = omega
            .get(i, amenity, year)
            .ok_or_else(|| Error::MissingKey(format!("omega for cluster {i}, amenity {amenity}, year {year}")))?;
        let d = distances.get(i, j);
        let group = config.periods.group_of(year);
        Ok(Some(PanelRow {
            dest: i,
            res: j,
            amenity: amenity.clone(),
            year,
            count,
            log_count,
            omega: w,
            distance_km: d,
            log_dist: (d + config.delta_km).ln(),
            interval: Interval::of(d),
            covid: group == Some(PeriodGroup::Covid),
            recovery: group == Some(PeriodGroup::Recovery),
            y: 0.0,
            omega_std: 0.0,
            log_dist_std: 0.0,
        }))
    };

    let mut rows = Vec::new();
    match config.scope {
        PanelScope::Dense => {
            for &year in &years {
                for i in 0..n {
                    for j in 0..n {
                        for p in 0..amenities.len() {
                            let c = counts.get(&(year, i, j, p)).copied().unwrap_or(0);
                            rows.extend(make_row(year, i, j, p, c)?);
                        }
                    }
                }
            }
        }
        PanelScope::Observed => {
            for (&(year, i, j, p), &c) in &counts {
                rows.extend(make_row(year, i, j, p, c)?);
            }
        }
    }
    sort_rows(&mut rows);
    let report = standardize(&mut rows, "panel", config.log_mode, true)?;
    Ok(Panel { rows, report })
}

fn require_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(Error::param("delta_km", delta, "(0, inf)"))
    }
}

/// Partitions rows by distance band; every band is present, possibly empty.
pub fn split_by_interval(rows: &[PanelRow]) -> BTreeMap<Interval, Vec<PanelRow>> {
    let mut out: BTreeMap<Interval, Vec<PanelRow>> = Interval::ALL.iter().map(|i| (*i, Vec::new())).collect();
    for r in rows {
        out.get_mut(&r.interval).unwrap().push(r.clone());
    }
    out
}

pub const PANEL_HEADERS: [&str; 15] = [
    "dest_cluster",
    "res_cluster",
    "amenity",
    "period",
    "count",
    "log_count",
    "omega",
    "distance_km",
    "log_dist",
    "interval",
    "covid",
    "recovery",
    "y",
    "omega_std",
    "log_dist_std",
];

pub fn write_panel(path: &Path, rows: &[PanelRow]) -> Result<()> {
    let mut w = TableWriter::create(path, &PANEL_HEADERS)?;
    for r in rows {
        w.row([
            r.dest.to_string(),
            r.res.to_string(),
            r.amenity.clone(),
            r.year.to_string(),
            r.count.to_string(),
            r.log_count.to_string(),
            r.omega.to_string(),
            r.distance_km.to_string(),
            r.log_dist.to_string(),
            r.interval.label().to_string(),
            u8::from(r.covid).to_string(),
            u8::from(r.recovery).to_string(),
            r.y.to_string(),
            r.omega_std.to_string(),
            r.log_dist_std.to_string(),
        ])?;
    }
    w.finish()
}

pub fn read_panel(path: &Path) -> Result<Vec<PanelRow>> {
    let table = Table::read(path, &PANEL_HEADERS)?;
    let flag = |row: &crate::table::Row<'_>, col: &str| -> Result<bool> {
        match row.str(col)? {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(row.error(col, format!("expected 0 or 1, got `{other}`"))),
        }
    };
    let mut rows = Vec::with_capacity(table.len());
    for row in table.rows() {
        let label = row.str("interval")?;
        let interval = Interval::from_label(label).ok_or_else(|| row.error("interval", format!("unknown interval `{label}`")))?;
        let distance_km = row.float("distance_km")?;
        if distance_km < 0.0 || Interval::of(distance_km) != interval {
            return Err(row.error("interval", format!("`{label}` inconsistent with distance {distance_km}")));
        }
        let covid = flag(&row, "covid")?;
        let recovery = flag(&row, "recovery")?;
        if covid && recovery {
            return Err(row.error("recovery", "covid and recovery both set"));
        }
        rows.push(PanelRow {
            dest: row.parse("dest_cluster")?,
            res: row.parse("res_cluster")?,
            amenity: row.str("amenity")?.to_string(),
            year: row.parse("period")?,
            count: row.parse("count")?,
            log_count: row.float("log_count")?,
            omega: row.float("omega")?,
            distance_km,
            log_dist: row.float("log_dist")?,
            interval,
            covid,
            recovery,
            y: row.float("y")?,
            omega_std: row.float("omega_std")?,
            log_dist_std: row.float("log_dist_std")?,
        });
    }
    Ok(rows)
}
