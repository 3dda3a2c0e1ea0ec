//! Pipeline configuration: one TOML file, overridable per key from the
//! command line.

use std::path::{Path, PathBuf};

use consumption_space::clusters::ClusterParams;
use consumption_space::fe::{named_specs, FeOptions, DEFAULT_GRID_KM};
use consumption_space::panel::{GroupScope, LogMode, PanelConfig, PanelScope, PeriodGroups};
use consumption_space::synth::SynthConfig;
use consumption_space::typology::KMeansConfig;
use consumption_space::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub stores: PathBuf,
    pub cells: PathBuf,
    pub transactions: PathBuf,
    pub profiles: PathBuf,
}

impl Default for Inputs {
    fn default() -> Self {
        Inputs {
            stores: PathBuf::from("data/stores.csv"),
            cells: PathBuf::from("data/cells.csv"),
            transactions: PathBuf::from("data/transactions.csv"),
            profiles: PathBuf::from("data/profiles.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub phi_years: Vec<u16>,
    pub group_scope: GroupScope,
    pub backbone_threshold: f64,
    pub top_pairs: usize,
}

impl Default for SpaceSection {
    fn default() -> Self {
        SpaceSection {
            phi_years: vec![2018],
            group_scope: GroupScope::WithShoppingArea,
            backbone_threshold: 0.4,
            top_pairs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSection {
    pub log_mode: LogMode,
    pub scope: PanelScope,
    pub delta_km: f64,
}

impl Default for PanelSection {
    fn default() -> Self {
        let p = PanelConfig::default();
        PanelSection {
            log_mode: p.log_mode,
            scope: p.scope,
            delta_km: p.delta_km,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub specs: Vec<String>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let o = FeOptions::default();
        FitSection {
            specs: named_specs().into_iter().map(|s| s.name).collect(),
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalSection {
    pub specs: Vec<String>,
    pub grid_km: Vec<f64>,
}

impl Default for MarginalSection {
    fn default() -> Self {
        MarginalSection {
            specs: ["eq6_pooled", "eq6_precovid", "eq6_covid", "eq6_recovery", "joint_pooled"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            grid_km: DEFAULT_GRID_KM.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowsSection {
    pub split_km: f64,
}

impl Default for FlowsSection {
    fn default() -> Self {
        FlowsSection { split_km: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSection {
    pub top_k: usize,
}

impl Default for RankSection {
    fn default() -> Self {
        RankSection { top_k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Directory the `synth` command writes into.
    pub dir: PathBuf,
    #[serde(flatten)]
    pub params: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            dir: PathBuf::from("data"),
            params: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    pub periods: PeriodGroups,
    pub cluster: ClusterParams,
    pub space: SpaceSection,
    pub panel: PanelSection,
    pub fit: FitSection,
    pub marginal: MarginalSection,
    pub typology: KMeansConfig,
    pub flows: FlowsSection,
    pub rank: RankSection,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("results"),
            inputs: Inputs::default(),
            periods: PeriodGroups::default(),
            cluster: ClusterParams::default(),
            space: SpaceSection::default(),
            panel: PanelSection::default(),
            fit: FitSection::default(),
            marginal: MarginalSection::default(),
            typology: KMeansConfig::default(),
            flows: FlowsSection::default(),
            rank: RankSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Loads `path` (or the built-in defaults) and applies `key=value`
    /// overrides, where keys are dotted TOML paths.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = consumption_space::table::read_text(p)?;
                text.parse::<toml::Table>().map_err(|e| {
                    let offset = e.span().map_or(0, |s| s.start);
                    let before = &text[..offset.min(text.len())];
                    let line = before.matches('\n').count() as u64 + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    Error::Schema {
                        path: p.to_path_buf(),
                        line,
                        column: format!("char {col}"),
                        message: e.message().trim().to_string(),
                    }
                })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            set_dotted(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: PipelineConfig = table
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
        let known = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(key) = unknown_key(&table, &known, "") {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.periods.validate()?;
        self.cluster.validate()?;
        if self.space.phi_years.is_empty() {
            return Err(Error::Config("space.phi_years is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.space.backbone_threshold) {
            return Err(param("space.backbone_threshold", self.space.backbone_threshold, "[0, 1]"));
        }
        if !(self.panel.delta_km.is_finite() && self.panel.delta_km > 0.0) {
            return Err(param("panel.delta_km", self.panel.delta_km, "(0, inf)"));
        }
        if !(self.fit.tol.is_finite() && self.fit.tol > 0.0) {
            return Err(param("fit.tol", self.fit.tol, "(0, inf)"));
        }
        if self.fit.max_iter == 0 {
            return Err(param("fit.max_iter", 0, "[1, inf)"));
        }
        if !(self.flows.split_km.is_finite() && self.flows.split_km >= 0.0) {
            return Err(param("flows.split_km", self.flows.split_km, "[0, inf)"));
        }
        if self.rank.top_k == 0 {
            return Err(param("rank.top_k", 0, "[1, inf)"));
        }
        if self.typology.k == 0 || self.typology.k > 26 {
            return Err(param("typology.k", self.typology.k, "[1, 26]"));
        }
        if self.typology.n_restarts == 0 {
            return Err(param("typology.n_restarts", 0, "[1, inf)"));
        }
        Ok(())
    }

    pub fn panel_config(&self) -> PanelConfig {
        PanelConfig {
            log_mode: self.panel.log_mode,
            scope: self.panel.scope,
            delta_km: self.panel.delta_km,
            periods: self.periods.clone(),
        }
    }

    pub fn fe_options(&self) -> FeOptions {
        FeOptions {
            tol: self.fit.tol,
            max_iter: self.fit.max_iter,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn param(name: &str, value: impl ToString, range: &str) -> Error {
    Error::Parameter {
        name: name.to_string(),
        value: value.to_string(),
        range: range.to_string(),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// First key of `given` with no counterpart in the re-serialized config.
/// Catches misspellings inside sections whose types accept any key.
fn unknown_key(given: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = format!("{prefix}{k}");
        match (v, known.get(k)) {
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => {
                if let Some(bad) = unknown_key(g, kn, &format!("{path}.")) {
                    return Some(bad);
                }
            }
            (_, Some(_)) => {}
            (_, None) => return Some(path),
        }
    }
    None
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "cluster.gamma=5.0".into(),
                "output_dir=elsewhere".into(),
                "synth.seed=7".into(),
                "space.phi_years=[2017, 2018]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.cluster.gamma, 5.0);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.synth.params.seed, 7);
        assert_eq!(cfg.space.phi_years, vec![2017, 2018]);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(matches!(PipelineConfig::load(None, &["clustr.gamma=1".into()]), Err(Error::Config(_))));
        for key in ["cluster.gama=1", "synth.sed=1", "synth.truth.beta=1", "typology.kk=3"] {
            match PipelineConfig::load(None, &[key.into()]) {
                Err(Error::Config(m)) => {
                    let leaf = key.split('=').next().unwrap().rsplit('.').next().unwrap();
                    assert!(m.contains(leaf), "{m}");
                }
                other => panic!("{key}: {other:?}"),
            }
        }
        match PipelineConfig::load(None, &["cluster.gamma=-1".into()]) {
            Err(Error::Parameter { name, .. }) => assert_eq!(name, "gamma"),
            other => panic!("{other:?}"),
        }
        match PipelineConfig::load(None, &["rank.top_k=0".into()]) {
            Err(Error::Parameter { name, range, .. }) => {
                assert_eq!(name, "rank.top_k");
                assert_eq!(range, "[1, inf)");
            }
            other => panic!("{other:?}"),
        }
    }
}
