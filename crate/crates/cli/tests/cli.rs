//! Command-line behaviour: exit codes, error reports and artifacts.

use std::path::Path;
use std::process::{Command, Output};

use consumption_space_cli::config::PipelineConfig;
use serde_json::Value;

const SMALL: &str = r#"
[synth]
n_peaks = 6
stores_per_peak = 60
n_amenities = 12
n_blocks = 3
n_residence_cells = 36
"#;

fn cspace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cspace"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn error_of(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = cspace(dir.path(), &["detect-clusters"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert_eq!(e["error"], "io");
    assert_eq!(e["path"], "data/stores.csv");
}

#[test]
fn unknown_spec_lists_the_catalogue() {
    let dir = tempfile::tempdir().unwrap();
    let out = cspace(dir.path(), &["fit", "--spec", "eq9"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_of(&out);
    assert_eq!(e["error"], "spec");
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("eq9") && msg.contains("joint_pooled") && msg.contains("eq7_type_E"), "{msg}");
}

#[test]
fn configuration_errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let out = cspace(dir.path(), &["--set", "cluster.gama=5", "show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "config");

    let out = cspace(dir.path(), &["--set", "flows.split_km=-1", "show-config"]);
    let e = error_of(&out);
    assert_eq!((e["error"].as_str(), e["parameter"].as_str()), (Some("parameter"), Some("flows.split_km")));

    std::fs::write(dir.path().join("bad.toml"), "[cluster]\ngamma = 7.58\ncutoff_km = \n").unwrap();
    let out = cspace(dir.path(), &["--config", "bad.toml", "show-config"]);
    let e = error_of(&out);
    assert_eq!(e["error"], "schema");
    assert_eq!(e["line"], 3);
}

#[test]
fn show_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = cspace(dir.path(), &["--set", "typology.seed=9", "show-config"]);
    assert!(out.status.success());
    std::fs::write(dir.path().join("echo.toml"), &out.stdout).unwrap();
    let cfg = PipelineConfig::load(Some(&dir.path().join("echo.toml")), &[]).unwrap();
    assert_eq!(cfg.typology.seed, 9);
    assert_eq!(cfg.fit, PipelineConfig::default().fit);
}

#[test]
fn stages_write_artifacts_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let cfg = ["--config", "small.toml", "--out", "results"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = cfg.iter().chain(extra).copied().collect();
        let out = cspace(d, &args);
        assert!(out.status.success(), "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth"]);
    assert!(d.join("data/manifest.json").exists());
    run(&["run-all"]);
    for f in [
        "clusters/clusters.csv",
        "space/consumption_space.gml",
        "space/omega.csv",
        "panel/panel.csv",
        "typology/types.csv",
        "fits/joint_pooled.json",
        "fits/table.txt",
        "marginal/eq6_pooled.csv",
        "flows/covid.gml",
        "rank/top.csv",
    ] {
        assert!(d.join("results").join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(d.join("results/marginal/eq6_pooled.csv")).unwrap();
    assert!(header.starts_with("distance_km,effect,se\n"));

    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("results/metadata/fit.json")).unwrap()).unwrap();
    assert_eq!(meta["stage"], "fit");
    assert!(meta["elapsed_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(meta["parameters"]["synth"]["n_peaks"], 6);
    assert!(meta["warnings"].is_array());

    std::fs::remove_dir_all(d.join("results/fits")).unwrap();
    run(&["fit", "--spec", "eq6_covid"]);
    let fits: Vec<_> = std::fs::read_dir(d.join("results/fits")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(fits.len(), 2, "{fits:?}");

    let args: Vec<&str> = cfg.iter().chain(&["fit", "--spec", "eq7_interval_20plus"]).copied().collect();
    let out = cspace(d, &args);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"], "input");
}
