//! End-to-end runs of the `muqar` binary on a tiny synthetic dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SYNTH: &str = r#"{
    "seed": 3, "weeks": 30, "n": 4, "k": 1,
    "num_established": 60, "established_weeks": 4, "num_new": 20,
    "users_per_group": 10, "interactions_per_user_day": 4.0
}"#;

const MANIFEST: &str = r#"{
    "train": { "epochs": 2, "batch_size": 32, "patience": 5 }
}"#;

fn muqar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muqar"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = muqar(args);
    assert!(
        out.status.success(),
        "muqar {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated and built dataset plus a short-training manifest.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Self { dir };
        fs::write(f.path("synth.json"), SYNTH).unwrap();
        fs::write(f.path("manifest.json"), MANIFEST).unwrap();
        ok(&["simulate", "--config", s(&f.path("synth.json")), "--out", s(&f.path("raw"))]);
        ok(&["build", "--data", s(&f.path("raw")), "--out", s(&f.path("built"))]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, run: &str, mask: &str) -> PathBuf {
        let out = self.path(run);
        ok(&[
            "train",
            "--config",
            s(&self.path("manifest.json")),
            "--data",
            s(&self.path("built")),
            "--out",
            s(&out),
            "--mask",
            mask,
        ]);
        out
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, SYNTH).unwrap();
    for run in ["a", "b"] {
        ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join(run)), "--seed", "11"]);
    }
    ok(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("c")), "--seed", "12"]);
    let read = |run: &str| fs::read(dir.path().join(run).join("interactions.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn short_span_exits_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"weeks": 10, "n": 12, "k": 1}"#).unwrap();
    let out = muqar(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("raw"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n + k + 1"));
}

#[test]
fn missing_data_directory_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = muqar(&["build", "--data", s(&dir.path().join("absent")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn build_train_evaluate_predict() {
    let f = Fixture::new();
    assert!(f.path("built/examples.jsonl").is_file());
    assert!(f.path("built/panels/group0.csv").is_file());

    let run = f.train("run", "I+A+X");
    for file in ["model", "run.json", "split.json", "history.csv", "fit.json"] {
        assert!(run.join(file).exists(), "missing {file}");
    }

    ok(&["evaluate", "--model", s(&run), "--split", "test"]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let mae = metrics["metrics"]["mae"].as_f64().unwrap();
    assert!(mae.is_finite() && mae >= 0.0);
    assert_eq!(metrics["tags"]["ablation"], "I+A+X");

    let preds = f.path("preds.csv");
    ok(&["predict", "--model", s(&run), "--split", "test", "--out", s(&preds)]);
    let (header, rows) = read_csv(&preds);
    assert_eq!(header, ["product_id", "group_id", "target_week", "forecast_1", "target_1"]);
    assert!(!rows.is_empty());

    // Scoring the predicted table reproduces the model's own test MAE.
    ok(&["evaluate", "--forecasts", s(&preds), "--out", s(&f.path("scored"))]);
    let scored: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("scored/metrics.json")).unwrap()).unwrap();
    assert!((scored["metrics"]["mae"].as_f64().unwrap() - mae).abs() < 1e-9);
}

#[test]
fn perfect_forecasts_score_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    fs::write(&csv, "forecast_1,target_1\n0.2,0.2\n0.7,0.7\n0.4,0.4\n").unwrap();
    ok(&["evaluate", "--forecasts", s(&csv), "--out", s(&dir.path().join("m"))]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["metrics"]["mae"].as_f64(), Some(0.0));
}

#[test]
fn select_ranks_dominating_candidate_first() {
    let dir = tempfile::tempdir().unwrap();
    let reports = dir.path().join("reports.csv");
    fs::write(
        &reports,
        "model,ablation,dataset,count,mae,pcc\n\
         cnn,A,d,10,0.30,0.40\n\
         lstm,A,d,10,0.10,0.90\n\
         convlstm,A,d,10,0.20,0.60\n",
    )
    .unwrap();
    let ranking = dir.path().join("ranking.csv");
    ok(&["select", "--reports", s(&reports), "--out", s(&ranking)]);
    let (header, rows) = read_csv(&ranking);
    assert_eq!(header, ["rank", "candidate", "closeness"]);
    let order: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(order, ["lstm[A]", "convlstm[A]", "cnn[A]"]);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 1.0);
    assert_eq!(rows[2][2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn grid_trains_each_candidate() {
    let f = Fixture::new();
    let grid = f.path("grid.json");
    fs::write(&grid, r#"{"backbones": ["lstm"], "layers": [1, 2], "widths": [8, 4]}"#).unwrap();
    let out = f.path("grid");
    ok(&[
        "grid",
        "--config",
        s(&f.path("manifest.json")),
        "--data",
        s(&f.path("built")),
        "--out",
        s(&out),
        "--mask",
        "A",
        "--grid",
        s(&grid),
    ]);
    let (_, rows) = read_csv(&out.join("reports.csv"));
    assert_eq!(rows.len(), 2);
    assert!(out.join("lstm-8-4/model").exists());

    ok(&["select", "--reports", s(&out.join("reports.csv")), "--out", s(&f.path("rank.csv"))]);
    assert_eq!(read_csv(&f.path("rank.csv")).1.len(), 2);
}

#[test]
fn empty_grid_is_rejected() {
    let f = Fixture::new();
    let grid = f.path("grid.json");
    fs::write(&grid, r#"{"backbones": [], "layers": [1], "widths": [8]}"#).unwrap();
    let out = muqar(&[
        "grid",
        "--data",
        s(&f.path("built")),
        "--out",
        s(&f.path("grid")),
        "--grid",
        s(&grid),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
