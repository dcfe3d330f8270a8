//! End-to-end tests of the command-line surface: artifact schemas, exit
//! codes, ablation modes, and reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nclamp")
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Out {
    let output = Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs");
    Out {
        code: output.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(
        out.code, 0,
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args, out.stdout, out.stderr
    );
    out.stdout
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small but nontrivial pipeline fixture shared by several tests.
fn small_pipeline(dir: &Path) -> (String, String) {
    let data = p(dir, "data.ncds");
    let model = p(dir, "model.json");
    ok(&[
        "gen-data", "--out", &data, "--classes", "3", "--dim", "4", "--samples", "300",
        "--class-sep", "1.5", "--spread", "0.7", "--label-noise", "0.05", "--seed", "5",
    ]);
    ok(&[
        "train-base", "--data", &data, "--out", &model, "--hidden", "8", "--epochs", "120",
        "--lr", "0.5", "--seed", "5",
    ]);
    (data, model)
}

#[test]
fn unknown_method_is_usage_error() {
    let out = run(&[
        "calibrate", "--model", "x.json", "--data", "y.ncds", "--method", "spline",
        "--out", "c.json", "--seed", "1",
    ]);
    assert_eq!(out.code, 1);
    assert!(
        out.stderr.contains("possible values") || out.stderr.contains("Usage"),
        "stderr: {}",
        out.stderr
    );
}

#[test]
fn missing_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "evaluate", "--model", &p(dir.path(), "absent.json"), "--data",
        &p(dir.path(), "absent.ncds"), "--out", &p(dir.path(), "r.json"), "--seed", "1",
    ]);
    assert_eq!(out.code, 2, "stderr: {}", out.stderr);
}

#[test]
fn truncated_dataset_is_parse_error_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    let mut bytes = std::fs::read(&data).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&data, &bytes).unwrap();
    let out = run(&[
        "evaluate", "--model", &model, "--data", &data, "--out", &p(dir.path(), "r.json"),
        "--seed", "1",
    ]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("truncated at byte"), "stderr: {}", out.stderr);
}

#[test]
fn model_layer_mismatch_names_layer_index() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    std::fs::write(
        &model,
        r#"{"input_dim":4,"class_count":3,"layers":[{"kind":"dense","in":4,"out":3,"w":[1,2,3],"b":[0,0,0]}]}"#,
    )
    .unwrap();
    let out = run(&[
        "evaluate", "--model", &model, "--data", &data, "--out", &p(dir.path(), "r.json"),
        "--seed", "1",
    ]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("layer 0"), "stderr: {}", out.stderr);
}

#[test]
fn calibrator_and_params_are_mutually_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    let ts = p(dir.path(), "ts.json");
    let cp = p(dir.path(), "cp.json");
    ok(&[
        "calibrate", "--model", &model, "--data", &data, "--method", "temp-nll", "--out", &ts,
        "--seed", "5", "--epochs", "50",
    ]);
    ok(&[
        "calibrate", "--model", &model, "--data", &data, "--method", "clamp-ce", "--out", &cp,
        "--seed", "5", "--epochs", "10",
    ]);
    let out = run(&[
        "evaluate", "--model", &model, "--data", &data, "--calibrator", &ts, "--params", &cp,
        "--out", &p(dir.path(), "r.json"), "--seed", "5",
    ]);
    assert_eq!(out.code, 1);
    let out = run(&[
        "evaluate", "--model", &model, "--data", &data, "--calibrator", &ts, "--mode", "joint",
        "--out", &p(dir.path(), "r.json"), "--seed", "5",
    ]);
    assert_eq!(out.code, 1);
    let out = run(&[
        "evaluate", "--model", &model, "--data", &data, "--mode", "joint",
        "--out", &p(dir.path(), "r.json"), "--seed", "5",
    ]);
    assert_eq!(out.code, 1);
}

#[test]
fn mode_none_is_raw_softmax_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    let cp = p(dir.path(), "cp.json");
    ok(&[
        "calibrate", "--model", &model, "--data", &data, "--method", "clamp-fl", "--gamma",
        "0.5", "--out", &cp, "--seed", "5", "--epochs", "15",
    ]);
    let raw = p(dir.path(), "raw.json");
    let none = p(dir.path(), "none.json");
    ok(&["evaluate", "--model", &model, "--data", &data, "--out", &raw, "--seed", "5"]);
    ok(&[
        "evaluate", "--model", &model, "--data", &data, "--params", &cp, "--mode", "none",
        "--out", &none, "--seed", "5",
    ]);
    assert_eq!(
        std::fs::read(&raw).unwrap(),
        std::fs::read(&none).unwrap(),
        "mode none must equal the uncalibrated evaluation byte for byte"
    );
}

#[test]
fn every_calibration_method_produces_a_loadable_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    for method in ["temp-nll", "vector", "matrix", "ms-odir", "dir-odir"] {
        let out_path = p(dir.path(), &format!("{method}.json"));
        ok(&[
            "calibrate", "--model", &model, "--data", &data, "--method", method, "--out",
            &out_path, "--seed", "5", "--epochs", "40", "--odir-lambdas", "0.1,10",
        ]);
        nclamp::files::load_calibrator(&PathBuf::from(&out_path)).unwrap();
        let report = p(dir.path(), &format!("{method}-r.json"));
        ok(&[
            "evaluate", "--model", &model, "--data", &data, "--calibrator", &out_path,
            "--out", &report, "--seed", "5",
        ]);
        nclamp::files::load_metric_report(&PathBuf::from(&report)).unwrap();
    }
    // Grid-searched temperature with a coarse grid.
    let grid = p(dir.path(), "grid.json");
    ok(&[
        "calibrate", "--model", &model, "--data", &data, "--method", "temp-grid", "--out",
        &grid, "--seed", "5", "--grid-lo", "0", "--grid-hi", "3", "--grid-step", "0.1",
    ]);
    nclamp::files::load_calibrator(&PathBuf::from(&grid)).unwrap();
    for method in ["clamp-ce", "clamp-fl"] {
        let out_path = p(dir.path(), &format!("{method}.json"));
        ok(&[
            "calibrate", "--model", &model, "--data", &data, "--method", method, "--out",
            &out_path, "--seed", "5", "--epochs", "15",
        ]);
        nclamp::files::load_clamp_params(&PathBuf::from(&out_path)).unwrap();
    }
}

#[test]
fn reliability_csv_has_locked_header_and_bin_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    let csv = p(dir.path(), "bins.csv");
    ok(&[
        "reliability", "--model", &model, "--data", &data, "--out", &csv, "--seed", "5",
        "--bins", "10",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "bin_lower,bin_upper,count,accuracy,confidence"
    );
    assert_eq!(lines.count(), 10);
}

#[test]
fn sweep_writes_table_and_best_params() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    let table = p(dir.path(), "sweep.csv");
    let best = p(dir.path(), "best.json");
    let stdout = ok(&[
        "sweep", "--model", &model, "--data", &data, "--gamma-grid", "0,1", "--lambda-grid",
        "0.01,0.1", "--out-table", &table, "--out-params", &best, "--seed", "5", "--epochs",
        "10",
    ]);
    assert!(stdout.contains("best gamma="), "stdout: {stdout}");
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "gamma,lambda,ece,entropy,final_loss");
    assert_eq!(lines.count(), 4);
    nclamp::files::load_clamp_params(&PathBuf::from(&best)).unwrap();
}

#[test]
fn metric_report_schema_is_locked() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_pipeline(dir.path());
    let report = p(dir.path(), "r.json");
    ok(&["evaluate", "--model", &model, "--data", &data, "--out", &report, "--seed", "5"]);
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let obj = value.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        vec![
            "accuracy", "ace", "bin_count", "bins", "ece", "mean_entropy", "nll",
            "range_count", "sce"
        ]
    );
    let bin = value["bins"][0].as_object().unwrap();
    let mut bin_keys: Vec<&str> = bin.keys().map(|k| k.as_str()).collect();
    bin_keys.sort_unstable();
    assert_eq!(
        bin_keys,
        vec!["accuracy", "confidence", "count", "index", "lower", "upper"]
    );
}

#[test]
fn verify_theory_emits_report_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = p(dir.path(), "theory.json");
    let stdout = ok(&["verify-theory", "--seed", "3", "--instances", "8", "--out", &report]);
    assert!(stdout.contains("lemma1 8/8 passed"), "stdout: {stdout}");
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(value["all_passed"], serde_json::Value::Bool(true));
    assert_eq!(value["lemma1"].as_array().unwrap().len(), 8);
}

#[test]
fn sample_seed_changes_draws_but_not_structure() {
    let dir = tempfile::tempdir().unwrap();
    let a = p(dir.path(), "a.ncds");
    let b = p(dir.path(), "b.ncds");
    ok(&[
        "gen-data", "--out", &a, "--classes", "3", "--dim", "4", "--samples", "200",
        "--seed", "9", "--sample-seed", "1",
    ]);
    ok(&[
        "gen-data", "--out", &b, "--classes", "3", "--dim", "4", "--samples", "200",
        "--seed", "9", "--sample-seed", "2",
    ]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

/// The committed golden file pins the full pipeline's numeric output; see
/// tests/golden/README for the blessed command sequence.
#[test]
fn golden_pipeline_report_matches() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "data.ncds");
    let model = p(dir.path(), "model.json");
    let params = p(dir.path(), "clamp.json");
    let report = p(dir.path(), "report.json");
    ok(&[
        "gen-data", "--out", &data, "--classes", "3", "--dim", "6", "--samples", "400",
        "--class-sep", "1.8", "--spread", "0.8", "--label-noise", "0.05", "--seed", "42",
    ]);
    ok(&[
        "train-base", "--data", &data, "--out", &model, "--hidden", "12", "--epochs", "200",
        "--lr", "0.5", "--seed", "42",
    ]);
    ok(&[
        "calibrate", "--model", &model, "--data", &data, "--method", "clamp-fl", "--gamma",
        "0.5", "--lam", "0.01", "--epochs", "60", "--lr", "0.02", "--out", &params,
        "--seed", "42",
    ]);
    ok(&[
        "evaluate", "--model", &model, "--data", &data, "--params", &params, "--mode",
        "joint", "--out", &report, "--seed", "42",
    ]);
    let got = nclamp::files::load_metric_report(&PathBuf::from(&report)).unwrap();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/e2e_report.json");
    let want = nclamp::files::load_metric_report(&golden_path).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    assert!(close(got.accuracy, want.accuracy), "accuracy {} vs {}", got.accuracy, want.accuracy);
    assert!(close(got.mean_entropy, want.mean_entropy));
    assert!(close(got.ece, want.ece), "ece {} vs {}", got.ece, want.ece);
    assert!(close(got.ace, want.ace));
    assert!(close(got.sce, want.sce));
    assert!(close(got.nll, want.nll));
    assert_eq!(got.bins.len(), want.bins.len());
    for (g, w) in got.bins.iter().zip(&want.bins) {
        assert_eq!(g.count, w.count);
        assert!(close(g.accuracy, w.accuracy));
        assert!(close(g.confidence, w.confidence));
    }
}
