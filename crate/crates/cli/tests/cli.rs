use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

/// A configuration small enough to run in about a second.
const QUICK: &str = r#"{"gan":{"steps":300},"latent_samples":1024,"bootstrap_replicates":50}"#;

/// The quick configuration with too few starters to fill the augmentation plan.
const SHORT: &str = r#"{"gan":{"steps":300},"latent_samples":1024,"bootstrap_replicates":50,"augmentation":{"max_starters":100}}"#;

fn latentfair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentfair"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stage_outcomes(out: &Path) -> Vec<(String, String)> {
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["name"].as_str().unwrap().to_string(), s["outcome"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"sed": 1}"#);
    let out = latentfair(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_value_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"traversal": {"threshold": 1.5}}"#);
    let out = latentfair(&["synth", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn partial_augmentation_exits_with_code_four_unless_allowed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SHORT);
    let dir = tmp.path().join("o");
    let dir_s = dir.to_str().unwrap();
    let out = latentfair(&["run", "--config", &cfg, "--out", dir_s]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let stages = stage_outcomes(&dir);
    assert_eq!(stages.last().unwrap(), &("augment".to_string(), "failed".to_string()));
    assert!(!dir.join("report.md").exists());

    let out = latentfair(&["run", "--config", &cfg, "--out", dir_s, "--allow-partial"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("report.md")).unwrap();
    assert!(report.contains("partial augmentation accepted"));
    assert!(report.contains("generator trainer mode:"));
}

#[test]
fn resume_after_deleting_report_reruns_only_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QUICK);
    let dir = tmp.path().join("o");
    let dir_s = dir.to_str().unwrap();
    let out = latentfair(&["run", "--config", &cfg, "--out", dir_s, "--allow-partial"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read(dir.join("metrics.csv")).unwrap();

    std::fs::remove_file(dir.join("report.md")).unwrap();
    let out = latentfair(&["run", "--config", &cfg, "--out", dir_s, "--allow-partial", "--resume"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (name, outcome) in stage_outcomes(&dir) {
        let want = if name == "evaluate" { "completed" } else { "reused" };
        assert_eq!(outcome, want, "stage {name}");
    }
    assert_eq!(std::fs::read(dir.join("metrics.csv")).unwrap(), metrics);
    assert!(dir.join("report.md").exists());
}

#[test]
fn report_subcommand_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QUICK);
    let dir = tmp.path().join("o");
    let dir_s = dir.to_str().unwrap();
    assert!(latentfair(&["run", "--config", &cfg, "--out", dir_s, "--allow-partial"]).status.success());
    let before = std::fs::read(dir.join("metrics.csv")).unwrap();
    let out = latentfair(&["report", "--config", &cfg, "--out", dir_s, "--allow-partial"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(dir.join("metrics.csv")).unwrap(), before);
}

#[test]
fn stage_subcommands_run_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QUICK);
    let dir = tmp.path().join("o");
    let dir_s = dir.to_str().unwrap();
    let base = ["--config", cfg.as_str(), "--out", dir_s, "--allow-partial"];
    let steps: [&[&str]; 9] = [
        &["synth"],
        &["train-gen"],
        &["train-clf", "--space", "image"],
        &["train-clf", "--space", "latent", "--target", "disease"],
        &["traverse"],
        &["augment"],
        &["train-diag", "--variant", "baseline"],
        &["train-diag", "--variant", "adapted"],
        &["evaluate"],
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().chain(base.iter()).copied().collect();
        let out = latentfair(&args);
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.join("report.md").exists());
    assert_eq!(stage_outcomes(&dir).len(), 9);
}

#[test]
fn stage_without_inputs_fails_with_stage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = latentfair(&["evaluate", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
