//! Command-line pipeline over the `consumption-space` library.

pub mod config;
pub mod stages;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use consumption_space::synth::GENERATOR_VERSION;
use consumption_space::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use config::PipelineConfig;
use stages::{Layout, Stage, StageOutput};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-stage sidecar. The only artifact that carries wall-clock data.
#[derive(Debug, Serialize)]
pub struct RunMetadata<'a> {
    pub stage: &'static str,
    pub tool_version: &'static str,
    pub generator_version: &'static str,
    pub started_unix_s: u64,
    pub elapsed_s: f64,
    pub seeds: Value,
    pub parameters: &'a PipelineConfig,
    pub artifacts: Vec<PathBuf>,
    pub warnings: &'a [String],
    pub summary: &'a Value,
}

/// Options a subcommand may pass on top of the configuration.
#[derive(Debug, Clone, Default)]
pub struct StageArgs {
    pub specs: Option<Vec<String>>,
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, args: &StageArgs) -> Result<StageOutput> {
    let layout = Layout::new(&cfg.output_dir);
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    log::info!("{}: start", stage.name());
    let out = match stage {
        Stage::DetectClusters => stages::run_detect_clusters(cfg, &layout),
        Stage::BuildSpace => stages::run_build_space(cfg, &layout),
        Stage::BuildPanel => stages::run_build_panel(cfg, &layout),
        Stage::Fit => stages::run_fit(
            cfg,
            &layout,
            args.specs.as_deref().unwrap_or(&cfg.fit.specs),
            args.specs.is_some(),
        ),
        Stage::Marginal => stages::run_marginal(cfg, &layout, args.specs.as_deref().unwrap_or(&cfg.marginal.specs)),
        Stage::Typology => stages::run_typology(cfg, &layout),
        Stage::Flows => stages::run_flows(cfg, &layout),
        Stage::Rank => stages::run_rank(cfg, &layout),
        Stage::Synth => stages::run_synth(cfg),
    }?;
    for w in &out.warnings {
        log::warn!("{}: {w}", stage.name());
    }
    let elapsed = clock.elapsed().as_secs_f64();
    log::info!("{}: done in {elapsed:.2}s", stage.name());
    let meta = RunMetadata {
        stage: stage.name(),
        tool_version: VERSION,
        generator_version: GENERATOR_VERSION,
        started_unix_s: started,
        elapsed_s: elapsed,
        seeds: json!({
            "typology": cfg.typology.seed,
            "synth": cfg.synth.params.seed,
            "synth_noise": cfg.synth.params.noise_seed,
        }),
        parameters: cfg,
        artifacts: out.artifacts.clone(),
        warnings: &out.warnings,
        summary: &out.summary,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::InvalidInput(format!("json: {e}")))?;
    let meta_path = match stage {
        Stage::Synth => cfg.synth.dir.join("metadata.json"),
        _ => layout.metadata(stage.name()),
    };
    consumption_space::table::write_text(&meta_path, &(text + "\n"))?;
    Ok(out)
}

pub fn run_all(cfg: &PipelineConfig) -> Result<()> {
    for stage in Stage::PIPELINE {
        run_stage(stage, cfg, &StageArgs::default())?;
    }
    Ok(())
}

/// Machine-readable error for stderr.
pub fn error_report(e: &Error) -> Value {
    let mut v = json!({ "error": error_kind(e), "message": e.to_string() });
    match e {
        Error::Io { path, .. } => v["path"] = json!(path),
        Error::Schema {
            path, line, column, ..
        } => {
            v["path"] = json!(path);
            v["line"] = json!(line);
            v["column"] = json!(column);
        }
        Error::Parameter { name, value, range } => {
            v["parameter"] = json!(name);
            v["value"] = json!(value);
            v["range"] = json!(range);
        }
        _ => {}
    }
    v
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Schema { .. } => "schema",
        Error::Parameter { .. } => "parameter",
        Error::Config(_) => "config",
        Error::Spec(_) => "spec",
        _ => "input",
    }
}

/// Exit status: 2 for configuration problems, 1 for data problems.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter { .. } | Error::Config(_) | Error::Spec(_) => 2,
        _ => 1,
    }
}
