use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deceptrace"));
    c.env_remove("DECEPTRACE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&["make-fixture", "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
    .path()
}

fn report_into(dir: &Path) -> Output {
    let config = fixture().join("fixture.toml");
    let set = format!("output_dir=\"{}\"", dir.display());
    run(&["report", "--config", config.to_str().unwrap(), "--set", &set])
}

#[test]
fn gen_data_is_deterministic() {
    let a = run(&["gen-data", "--dataset", "cities_conj", "--n", "50", "--seed", "3"]);
    let b = run(&["gen-data", "--dataset", "cities_conj", "--n", "50", "--seed", "3"]);
    let c = run(&["gen-data", "--dataset", "cities_conj", "--n", "50", "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 50);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["dataset_id"], "cities_conj");
    assert_eq!(first["logical_form"], "conjunction");
    assert_eq!(first["source_ids"].as_array().unwrap().len(), 2);
}

#[test]
fn gen_data_writes_negations_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("neg.jsonl");
    let out = run(&["gen-data", "--dataset", "neg_inventors", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.lines().all(|l| l.contains("\"polarity\":-1")));
    assert!(text.contains("did not live in"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["gen-data", "--dataset", "cities", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["gen-data", "--dataset", "not_a_dataset"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn sae_shift_without_weights_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sae-shift",
        "--set",
        &format!("dataset_dir=\"{}\"", dir.path().display()),
        "--set",
        &format!("store_root=\"{}\"", dir.path().display()),
        "--set",
        "model_id=\"m\"",
        "--set",
        "layers=[1]",
        "--set",
        "datasets=[\"cities\"]",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sae.weights"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let config = fixture().join("fixture.toml");
    let out = run(&["probe-sweep", "--config", config.to_str().unwrap(), "--set", "probe.lambda=2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_store_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture().join("fixture.toml");
    let out = run(&[
        "probe-sweep",
        "--config",
        config.to_str().unwrap(),
        "--set",
        &format!("store_root=\"{}\"", dir.path().display()),
        "--set",
        &format!("output_dir=\"{}\"", dir.path().join("o").display()),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn report_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = report_into(dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = dir.path();
    assert_eq!(header(&d.join("sweep.csv")), "layer,condition,probe,mean_acc,std_acc,folds");
    assert_eq!(
        header(&d.join("shift.csv")),
        "layer,pair,l2,cosine,overlap,l2_sigma,cosine_sigma,overlap_sigma,n,resamples"
    );
    assert_eq!(header(&d.join("top_features.csv")), "layer,feature_id,mean_truthful,mean_deceptive,abs_delta");
    assert_eq!(header(&d.join("pca_scatter.csv")), "layer,condition,row,pc1,pc2,label");
    assert!(d.join("shift_per_sample.csv").is_file());

    let sweep = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 32 * 2);

    let violin: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("violin.json")).unwrap()).unwrap();
    assert!(!violin.as_array().unwrap().is_empty());

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert!(report["config"].get("output_dir").is_none());
    assert_eq!(report["config"]["model_id"], "synthetic-16d");
    let outputs = report["outputs"].as_object().unwrap();
    assert!(outputs.contains_key("sweep.csv"));
    assert!(outputs.values().all(|v| v.as_str().is_some_and(|s| s.len() == 64)));

    let charts: Vec<PathBuf> = std::fs::read_dir(d.join("charts")).unwrap().map(|e| e.unwrap().path()).collect();
    assert!(charts.iter().any(|p| p.ends_with("sweep.svg")));
    for chart in charts {
        let text = std::fs::read_to_string(&chart).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", chart.display()));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
}

#[test]
fn thread_cap_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture().join("fixture.toml");
    let base = [
        "probe-sweep",
        "--config",
        config.to_str().unwrap(),
        "--set",
        &format!("output_dir=\"{}\"", dir.path().display()),
    ]
    .map(String::from);
    let bad = bin().args(&base).env("DECEPTRACE_THREADS", "0").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let one = bin().args(&base).env("DECEPTRACE_THREADS", "1").output().unwrap();
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    let single = std::fs::read(dir.path().join("sweep.csv")).unwrap();
    let many = bin().args(&base).env("DECEPTRACE_THREADS", "4").output().unwrap();
    assert!(many.status.success());
    assert_eq!(single, std::fs::read(dir.path().join("sweep.csv")).unwrap());
}
