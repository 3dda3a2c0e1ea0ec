use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use consumption_space_cli::config::PipelineConfig;
use consumption_space_cli::stages::Stage;
use consumption_space_cli::{error_report, exit_code, run_all, run_stage, StageArgs};

#[derive(Debug, Parser)]
#[command(name = "cspace", version, about = "Amenity clusters, consumption space and distance-decay regressions")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set cluster.gamma=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory (same as `--set output_dir=...`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Effective-density peaks and store membership.
    DetectClusters,
    /// Proximity, consumption-space graph and relatedness density.
    BuildSpace,
    /// Regression panel.
    BuildPanel,
    /// Fixed-effect regressions.
    Fit {
        /// Spec name; repeat for several. Defaults to the configured list.
        #[arg(long = "spec")]
        specs: Vec<String>,
    },
    /// Marginal effect of relatedness over distance.
    Marginal {
        #[arg(long = "spec")]
        specs: Vec<String>,
    },
    /// K-means typology of cluster density profiles.
    Typology,
    /// Period flow networks.
    Flows,
    /// Amenity intensity by distance band.
    Rank,
    /// Synthetic dataset with known ground truth.
    Synth {
        /// Output directory for the generated files.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Every analysis stage in order.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_report(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> consumption_space::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(out) = &cli.out {
        overrides.push(format!("output_dir={}", toml_string(out)));
    }
    if let Command::Synth { dir: Some(dir) } = &cli.command {
        overrides.push(format!("synth.dir={}", toml_string(dir)));
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    let specs = |s: Vec<String>| StageArgs {
        specs: (!s.is_empty()).then_some(s),
    };
    let (stage, args) = match cli.command {
        Command::DetectClusters => (Stage::DetectClusters, StageArgs::default()),
        Command::BuildSpace => (Stage::BuildSpace, StageArgs::default()),
        Command::BuildPanel => (Stage::BuildPanel, StageArgs::default()),
        Command::Fit { specs: s } => (Stage::Fit, specs(s)),
        Command::Marginal { specs: s } => (Stage::Marginal, specs(s)),
        Command::Typology => (Stage::Typology, StageArgs::default()),
        Command::Flows => (Stage::Flows, StageArgs::default()),
        Command::Rank => (Stage::Rank, StageArgs::default()),
        Command::Synth { .. } => (Stage::Synth, StageArgs::default()),
        Command::RunAll => return run_all(&cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
    };
    run_stage(stage, &cfg, &args).map(|_| ())
}

/// Quotes a path as a TOML basic string.
fn toml_string(p: &std::path::Path) -> String {
    toml::Value::String(p.to_string_lossy().into_owned()).to_string()
}
