//! One function per pipeline stage. Each reads its inputs from the
//! configured paths or from earlier stages' artifacts under the output
//! directory, and returns what it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use consumption_space::clusters::{detect_clusters, read_stores, ClusterPartition};
use consumption_space::complexity::space::{consumption_space_gml, edge_list, pair_table, write_edge_list, write_pair_table, NodeStat};
use consumption_space::complexity::{proximity, rca};
use consumption_space::fe::{fit, format_table, marginal_effects, spec_by_name, FitResult, Sample};
use consumption_space::geo::CellRegistry;
use consumption_space::panel::{
    build_panel, compute_omega, group_count_matrix, map_cells_to_clusters, read_panel, read_transactions, write_panel,
    ClusterDistances, MappedRecord, MappingReport, OmegaTable, PeriodGroup,
};
use consumption_space::synth::{generate, MANIFEST_FILE};
use consumption_space::table::{read_text, write_text, TableWriter};
use consumption_space::typology::{build_flow_network, distance_rank, kmeans_typology, read_profiles, Typology};
use consumption_space::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    DetectClusters,
    BuildSpace,
    BuildPanel,
    Fit,
    Marginal,
    Typology,
    Flows,
    Rank,
    Synth,
}

impl Stage {
    /// Order used by `run-all`; typology precedes fitting so type-split
    /// specs can read the labels.
    pub const PIPELINE: [Stage; 8] = [
        Stage::DetectClusters,
        Stage::BuildSpace,
        Stage::BuildPanel,
        Stage::Typology,
        Stage::Fit,
        Stage::Marginal,
        Stage::Flows,
        Stage::Rank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::DetectClusters => "detect-clusters",
            Stage::BuildSpace => "build-space",
            Stage::BuildPanel => "build-panel",
            Stage::Fit => "fit",
            Stage::Marginal => "marginal",
            Stage::Typology => "typology",
            Stage::Flows => "flows",
            Stage::Rank => "rank",
            Stage::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageOutput {
    pub artifacts: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub summary: Value,
}

/// Artifact paths under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    fn at(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.root.clone(), |p, s| p.join(s))
    }

    pub fn clusters(&self) -> PathBuf {
        self.at(&["clusters", "clusters.csv"])
    }
    pub fn membership(&self) -> PathBuf {
        self.at(&["clusters", "membership.csv"])
    }
    pub fn proximity(&self) -> PathBuf {
        self.at(&["space", "proximity.csv"])
    }
    pub fn space_gml(&self) -> PathBuf {
        self.at(&["space", "consumption_space.gml"])
    }
    pub fn pairs(&self) -> PathBuf {
        self.at(&["space", "pairs.csv"])
    }
    pub fn omega(&self) -> PathBuf {
        self.at(&["space", "omega.csv"])
    }
    pub fn mapping(&self) -> PathBuf {
        self.at(&["space", "mapping.json"])
    }
    pub fn panel(&self) -> PathBuf {
        self.at(&["panel", "panel.csv"])
    }
    pub fn standardization(&self) -> PathBuf {
        self.at(&["panel", "standardization.json"])
    }
    pub fn types(&self) -> PathBuf {
        self.at(&["typology", "types.csv"])
    }
    pub fn type_centroids(&self) -> PathBuf {
        self.at(&["typology", "centroids.csv"])
    }
    pub fn kmeans(&self) -> PathBuf {
        self.at(&["typology", "kmeans.json"])
    }
    pub fn fit(&self, spec: &str) -> PathBuf {
        self.at(&["fits", &format!("{spec}.json")])
    }
    pub fn fit_table(&self) -> PathBuf {
        self.at(&["fits", "table.txt"])
    }
    pub fn marginal(&self, spec: &str, period: Option<PeriodGroup>) -> PathBuf {
        let name = match period {
            Some(p) => format!("{spec}_{}.csv", p.name()),
            None => format!("{spec}.csv"),
        };
        self.at(&["marginal", &name])
    }
    pub fn flows(&self, period: PeriodGroup) -> PathBuf {
        self.at(&["flows", &format!("{}.gml", period.name())])
    }
    pub fn flows_summary(&self) -> PathBuf {
        self.at(&["flows", "summary.csv"])
    }
    pub fn rank_top(&self) -> PathBuf {
        self.at(&["rank", "top.csv"])
    }
    pub fn rank_matrix(&self) -> PathBuf {
        self.at(&["rank", "matrix.csv"])
    }
    pub fn metadata(&self, stage: &str) -> PathBuf {
        self.at(&["metadata", &format!("{stage}.json")])
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(format!("json: {e}")))?;
    write_text(path, &(text + "\n"))
}

fn read_fit(path: &Path) -> Result<FitResult> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: e.line() as u64,
        column: format!("char {}", e.column()),
        message: e.to_string(),
    })
}

struct Mapped {
    records: Vec<MappedRecord>,
    report: MappingReport,
    partition: ClusterPartition,
}

fn load_partition(layout: &Layout) -> Result<ClusterPartition> {
    ClusterPartition::read_csv(&layout.clusters(), &layout.membership())
}

fn load_mapped(cfg: &PipelineConfig, layout: &Layout) -> Result<Mapped> {
    let stores = read_stores(&cfg.inputs.stores)?;
    let registry = CellRegistry::read_csv(&cfg.inputs.cells)?;
    let partition = load_partition(layout)?;
    let transactions = read_transactions(&cfg.inputs.transactions)?;
    let (records, report) = map_cells_to_clusters(&transactions, &partition, &stores, &registry)?;
    Ok(Mapped {
        records,
        report,
        partition,
    })
}

fn mapping_warnings(report: &MappingReport, out: &mut Vec<String>) {
    if report.dropped_dest > 0 {
        out.push(format!(
            "{} records ({} purchases) dropped: destination outside every cluster",
            report.dropped_dest, report.dropped_count_total
        ));
    }
    if report.unmapped_residence > 0 {
        out.push(format!(
            "{} records have a residence outside every cluster; used for amenity mixes only",
            report.unmapped_residence
        ));
    }
}

fn read_types(path: &Path) -> Result<BTreeMap<usize, char>> {
    Typology::read_labels(path)
}

pub fn run_detect_clusters(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutput> {
    let stores = read_stores(&cfg.inputs.stores)?;
    let (field, partition) = detect_clusters(&stores, &cfg.cluster)?;
    partition.write_csv(&layout.clusters(), &layout.membership())?;
    let mut warnings = Vec::new();
    if !partition.unassigned.is_empty() {
        warnings.push(format!(
            "{} stores lie beyond {} km of every peak and are unassigned",
            partition.unassigned.len(),
            cfg.cluster.max_assign_km
        ));
    }
    Ok(StageOutput {
        artifacts: vec![layout.clusters(), layout.membership()],
        warnings,
        summary: json!({
            "n_stores": stores.len(),
            "n_clusters": partition.clusters.len(),
            "n_unassigned": partition.unassigned.len(),
            "mean_radius_km": partition.mean_radius_km(),
            "truncation_bound": field.truncation_bound,
        }),
    })
}

pub fn run_build_space(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutput> {
    let m = load_mapped(cfg, layout)?;
    let mut warnings = Vec::new();
    mapping_warnings(&m.report, &mut warnings);
    for y in &cfg.space.phi_years {
        if !m.records.iter().any(|r| r.period.year == *y) {
            warnings.push(format!("no purchases in proximity year {y}"));
        }
    }
    let groups = group_count_matrix(&m.records, &cfg.space.phi_years, cfg.space.group_scope)?;
    let prox = proximity(&rca(&groups))?;
    write_edge_list(&layout.proximity(), &edge_list(&prox))?;
    let (top, bottom) = pair_table(&prox, cfg.space.top_pairs);
    write_pair_table(&layout.pairs(), &top, &bottom)?;

    let stores = read_stores(&cfg.inputs.stores)?;
    let mut large: BTreeMap<&str, &str> = BTreeMap::new();
    for s in &stores {
        large.entry(s.category_small.as_str()).or_insert(s.category_large.as_str());
    }
    let stats: Vec<NodeStat> = prox
        .labels
        .iter()
        .enumerate()
        .map(|(p, a)| NodeStat {
            amenity: a.clone(),
            large_category: large.get(a.as_str()).unwrap_or(&"").to_string(),
            total_count: groups.values().column(p).sum() as u64,
        })
        .collect();
    write_text(
        &layout.space_gml(),
        &consumption_space_gml(&prox, &stats, cfg.space.backbone_threshold, true),
    )?;

    let years = cfg.periods.all_years();
    let omega = compute_omega(&m.records, m.partition.clusters.len(), &prox, &years)?;
    omega.write_csv(&layout.omega())?;
    write_json(&layout.mapping(), &m.report)?;
    Ok(StageOutput {
        artifacts: vec![layout.proximity(), layout.pairs(), layout.space_gml(), layout.omega(), layout.mapping()],
        warnings,
        summary: json!({
            "n_groups": groups.rows().len(),
            "n_amenities": prox.len(),
            "n_omega": omega.len(),
        }),
    })
}

pub fn run_build_panel(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutput> {
    let m = load_mapped(cfg, layout)?;
    let mut warnings = Vec::new();
    mapping_warnings(&m.report, &mut warnings);
    let omega = OmegaTable::read_csv(&layout.omega())?;
    let mut amenities: Vec<String> = omega.iter().map(|(_, a, _, _)| a.to_string()).collect();
    amenities.sort();
    amenities.dedup();
    let distances = ClusterDistances::from_partition(&m.partition);
    let panel = build_panel(&m.records, &omega, &distances, &amenities, &cfg.panel_config())?;
    write_panel(&layout.panel(), &panel.rows)?;
    write_json(&layout.standardization(), &panel.report)?;
    Ok(StageOutput {
        artifacts: vec![layout.panel(), layout.standardization()],
        warnings,
        summary: json!({ "n_rows": panel.rows.len(), "n_amenities": amenities.len() }),
    })
}

/// Configured specs the sample cannot identify are skipped with a
/// warning; `strict` (specs named on the command line) makes that an error.
pub fn run_fit(cfg: &PipelineConfig, layout: &Layout, specs: &[String], strict: bool) -> Result<StageOutput> {
    let specs = specs
        .iter()
        .map(|s| spec_by_name(s))
        .collect::<Result<Vec<_>>>()?;
    let rows = read_panel(&layout.panel())?;
    let types = if specs.iter().any(|s| matches!(s.sample, Sample::DestType(_))) {
        Some(read_types(&layout.types())?)
    } else {
        None
    };
    let mut fits = Vec::with_capacity(specs.len());
    let mut artifacts = Vec::new();
    let mut warnings = Vec::new();
    for spec in &specs {
        log::info!("fitting {}", spec.name);
        let f = match fit(spec, &rows, types.as_ref(), cfg.panel.log_mode, cfg.fe_options()) {
            Ok(f) => f,
            Err(e @ (Error::DegenerateSample(_) | Error::RankDeficient { .. })) if !strict => {
                warnings.push(format!("{} skipped: {e}", spec.name));
                continue;
            }
            Err(e) => return Err(e),
        };
        if f.covariance_repaired {
            warnings.push(format!(
                "{}: clustered covariance not PSD (min eigenvalue {:e}); negative eigenvalues truncated",
                spec.name, f.min_eigenvalue
            ));
        }
        if f.n_dropped_singletons > 0 {
            warnings.push(format!("{}: {} singleton observations dropped", spec.name, f.n_dropped_singletons));
        }
        write_json(&layout.fit(&spec.name), &f)?;
        artifacts.push(layout.fit(&spec.name));
        fits.push(f);
    }
    write_text(&layout.fit_table(), &format_table(&fits))?;
    artifacts.push(layout.fit_table());
    let summary: BTreeMap<&str, Value> = fits
        .iter()
        .map(|f| {
            let coefs: BTreeMap<&str, Value> = f
                .coefficients
                .iter()
                .map(|c| (c.name.as_str(), json!({ "estimate": c.estimate, "se": c.se, "stars": c.stars })))
                .collect();
            (f.spec.name.as_str(), json!({ "n_obs": f.n_obs, "coefficients": coefs }))
        })
        .collect();
    Ok(StageOutput {
        artifacts,
        warnings,
        summary: json!(summary),
    })
}

pub fn run_marginal(cfg: &PipelineConfig, layout: &Layout, specs: &[String]) -> Result<StageOutput> {
    let mut artifacts = Vec::new();
    for name in specs {
        spec_by_name(name)?;
        let f = read_fit(&layout.fit(name))?;
        let mut periods = vec![None];
        if f.index("omega_x_covid").is_some() {
            periods.push(Some(PeriodGroup::Covid));
        }
        if f.index("omega_x_recovery").is_some() {
            periods.push(Some(PeriodGroup::Recovery));
        }
        for period in periods {
            let curve = marginal_effects(&f, &cfg.marginal.grid_km, cfg.panel.delta_km, period)?;
            let path = layout.marginal(name, period);
            curve.write_csv(&path)?;
            artifacts.push(path);
        }
    }
    Ok(StageOutput {
        artifacts,
        warnings: Vec::new(),
        summary: json!({ "specs": specs }),
    })
}

pub fn run_typology(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutput> {
    let profiles = read_profiles(&cfg.inputs.profiles)?;
    let t = kmeans_typology(&profiles, &cfg.typology)?;
    t.write_csv(&layout.types(), &layout.type_centroids())?;
    write_json(&layout.kmeans(), &t)?;
    let mut warnings = Vec::new();
    if let Ok(p) = load_partition(layout) {
        let missing = p.clusters.iter().filter(|c| !t.labels.contains_key(&c.cluster_id)).count();
        if missing > 0 {
            warnings.push(format!("{missing} detected clusters have no density profile"));
        }
    }
    Ok(StageOutput {
        artifacts: vec![layout.types(), layout.type_centroids(), layout.kmeans()],
        warnings,
        summary: json!({ "wcss": t.wcss, "best_restart": t.best_restart, "sizes": t.centroids.iter().map(|c| c.n_members).collect::<Vec<_>>() }),
    })
}

pub fn run_flows(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutput> {
    let m = load_mapped(cfg, layout)?;
    let mut warnings = Vec::new();
    mapping_warnings(&m.report, &mut warnings);
    let types = match read_types(&layout.types()) {
        Ok(t) => t,
        Err(Error::Io { .. }) => {
            warnings.push("no cluster types found; nodes and edges carry type NA".into());
            BTreeMap::new()
        }
        Err(e) => return Err(e),
    };
    let distances = ClusterDistances::from_partition(&m.partition);
    let mut summary = TableWriter::create(
        &layout.flows_summary(),
        &["period", "transactions", "node_total", "edge_total", "n_edges", "excluded"],
    )?;
    let mut artifacts = Vec::new();
    let mut totals = BTreeMap::new();
    for period in PeriodGroup::ALL {
        let years = cfg.periods.years(period);
        let net = build_flow_network(&m.records, &distances, &types, period, years, cfg.flows.split_km)?;
        let transactions: u64 = m
            .records
            .iter()
            .filter(|r| r.res_cluster.is_some() && years.contains(&r.period.year))
            .map(|r| r.count)
            .sum();
        if net.total() != transactions {
            return Err(Error::InvalidInput(format!(
                "{} flows hold {} purchases but the records hold {transactions}",
                period.name(),
                net.total()
            )));
        }
        write_text(&layout.flows(period), &net.to_gml())?;
        artifacts.push(layout.flows(period));
        let nodes: u64 = net.node_sizes.values().sum();
        summary.row([
            period.name().to_string(),
            transactions.to_string(),
            nodes.to_string(),
            (net.total() - nodes).to_string(),
            net.edges.len().to_string(),
            net.excluded_count.to_string(),
        ])?;
        totals.insert(period.name(), transactions);
    }
    summary.finish()?;
    artifacts.push(layout.flows_summary());
    Ok(StageOutput {
        artifacts,
        warnings,
        summary: json!({ "transactions": totals }),
    })
}

pub fn run_rank(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutput> {
    let m = load_mapped(cfg, layout)?;
    let mut warnings = Vec::new();
    mapping_warnings(&m.report, &mut warnings);
    let distances = ClusterDistances::from_partition(&m.partition);
    let rank = distance_rank(&m.records, &distances, &cfg.periods.all_years())?;
    rank.write_top_csv(&layout.rank_top(), cfg.rank.top_k)?;
    rank.write_matrix_csv(&layout.rank_matrix())?;
    Ok(StageOutput {
        artifacts: vec![layout.rank_top(), layout.rank_matrix()],
        warnings,
        summary: json!({ "intervals": rank.intervals, "shares": rank.shares }),
    })
}

pub fn run_synth(cfg: &PipelineConfig) -> Result<StageOutput> {
    let data = generate(&cfg.synth.params)?;
    let dir = &cfg.synth.dir;
    data.write(dir)?;
    let mut warnings = Vec::new();
    if data.manifest.presence_flips > 0 {
        warnings.push(format!(
            "{} planted presence entries flip once local purchases are added",
            data.manifest.presence_flips
        ));
    }
    let artifacts = [&cfg.inputs.stores, &cfg.inputs.cells, &cfg.inputs.profiles, &cfg.inputs.transactions]
        .iter()
        .map(|p| dir.join(p.file_name().unwrap_or_default()))
        .chain([dir.join(MANIFEST_FILE)])
        .collect();
    Ok(StageOutput {
        artifacts,
        warnings,
        summary: json!({
            "n_stores": data.world.stores.len(),
            "n_cells": data.world.registry.len(),
            "n_records": data.manifest.n_records,
            "rounding": data.manifest.rounding,
        }),
    })
}
