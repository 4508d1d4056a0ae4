use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ldpwave::io::read_records_file;

const BIN: &str = env!("CARGO_BIN_EXE_ldpwave");

fn run(dir: &Path, args: &[&str]) -> (i32, PathBuf, String) {
    let out = Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    (out.status.code().unwrap_or(-1), dir.join(stdout.trim()), stderr)
}

fn ok(dir: &Path, args: &[&str]) -> PathBuf {
    let (code, path, err) = run(dir, args);
    assert_eq!(code, 0, "{args:?}: {err}");
    path
}

fn write_spec(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const M2_SPEC: &str = r#"{
  "scenario": {
    "mechanism": {"variant": "mechanism2", "alpha": 2.0, "nu": 2.0, "j0": 0, "j1": 3},
    "estimator": {"mode": "adaptive", "nu": 2.0}
  },
  "n": 300
}"#;

#[test]
fn privatize_is_reproducible_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok(tmp.path(), &["--out", "a", "--seed", "5", "privatize", "--n", "120"]);
    let b = ok(tmp.path(), &["--out", "b", "--seed", "5", "privatize", "--n", "120"]);
    let fa = fs::read(a.join("records.csv")).unwrap();
    assert_eq!(fa, fs::read(b.join("records.csv")).unwrap());
    // Rerunning into the same directory is accepted (same bytes).
    assert_eq!(ok(tmp.path(), &["--out", "a", "--seed", "5", "privatize", "--n", "120"]), a);

    let batch = read_records_file(&a.join("records.csv")).unwrap();
    let slots = batch.mechanism.layout().len();
    let lines = String::from_utf8(fa).unwrap().lines().count();
    assert_eq!(lines, 2 + 120 * slots);
    assert_eq!(batch.records.len(), 120);

    let c = ok(tmp.path(), &["--out", "c", "--seed", "6", "privatize", "--n", "120"]);
    assert_ne!(fs::read(c.join("records.csv")).unwrap(), fs::read(a.join("records.csv")).unwrap());
}

#[test]
fn header_digest_follows_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let s1 = write_spec(tmp.path(), "a.json", r#"{"scenario": {"mechanism": {"alpha": 1.0}}}"#);
    let s2 = write_spec(tmp.path(), "b.json", r#"{"scenario": {"mechanism": {"alpha": 1.5}}}"#);
    let a = ok(tmp.path(), &["--spec", &s1, "privatize", "--n", "3"]);
    let b = ok(tmp.path(), &["--spec", &s2, "privatize", "--n", "3"]);
    let ha = read_records_file(&a.join("records.csv")).unwrap().header;
    let hb = read_records_file(&b.join("records.csv")).unwrap().header;
    assert_ne!(ha.digest(), hb.digest());
}

#[test]
fn tampered_header_is_a_digest_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = ok(tmp.path(), &["privatize", "--n", "4"]);
    let text = fs::read_to_string(dir.join("records.csv")).unwrap();
    let bad = text.replacen("alpha=1 ", "alpha=9 ", 1);
    assert_ne!(bad, text);
    fs::write(tmp.path().join("bad.csv"), bad).unwrap();
    let (code, _, err) = run(tmp.path(), &["estimate", "--records", "bad.csv"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn estimate_reports_levels_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "m2.json", M2_SPEC);
    let rec = ok(tmp.path(), &["--spec", &spec, "privatize"]).join("records.csv");
    let rec = rec.to_str().unwrap();

    let adaptive = ok(tmp.path(), &["--spec", &spec, "estimate", "--records", rec]);
    let again = ok(tmp.path(), &["--spec", &spec, "--out", "again", "estimate", "--records", rec]);
    for f in ["estimate.json", "grid.csv"] {
        assert_eq!(fs::read(adaptive.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(adaptive.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(doc["mode"], "adaptive");
    assert_eq!(doc["off_theorem"], false);
    assert_eq!(doc["n"], 300);
    for level in doc["levels"].as_array().unwrap() {
        assert!(level["kept"].as_u64().unwrap() <= level["total"].as_u64().unwrap());
    }

    let linear = ok(tmp.path(), &["--spec", &spec, "estimate", "--records", rec, "--mode", "linear", "--normalize"]);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(linear.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(doc["off_theorem"], true);
    let grid = fs::read_to_string(linear.join("grid.csv")).unwrap();
    assert!(grid.starts_with("x,fhat,fhat_normalized\n"));
    assert_eq!(grid.lines().count(), 1026);

    let (code, _, err) = run(tmp.path(), &["--spec", &spec, "estimate", "--records", rec, "--nu", "3"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn audit_passes_for_haar_and_locates_the_maximum() {
    let tmp = tempfile::tempdir().unwrap();
    let dir =
        ok(tmp.path(), &["audit", "--family", "haar", "--alpha", "1", "--j0", "0", "--j1", "4", "--step", "0.0078125"]);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("audit.json")).unwrap()).unwrap();
    assert_eq!(doc["pass"], true);
    let max = doc["max_log_ratio"].as_f64().unwrap();
    assert!(max > 0.0 && max <= 1.0 + 1e-9);
    for x in doc["argmax"].as_array().unwrap() {
        assert!((-1.0..=1.0).contains(&x.as_f64().unwrap()));
    }
    let csv = fs::read_to_string(dir.join("audit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.trim_end().ends_with(",true"));
}

#[test]
fn rate_study_synthetic_self_test() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = ok(tmp.path(), &["--format", "json", "rate-study", "--synthetic", "0.5", "--reps", "20"]);
    assert!(!dir.join("risks.csv").exists());
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("rate_study.json")).unwrap()).unwrap();
    assert!((doc["fitted_slope"].as_f64().unwrap() + 0.5).abs() <= 0.05);
    assert_eq!(doc["theoretical_slope"], -0.5);
    assert_eq!(doc["regime"], "dense");
}

#[test]
fn rate_study_regime_matches_theory_section() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "s.json",
        r#"{"n_grid": [128, 256, 512, 1024], "reps": 4, "theory": {"s": 1, "p": 1, "r": 4, "regime": "sparse"}}"#,
    );
    let dir = ok(tmp.path(), &["--spec", &spec, "rate-study"]);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("rate_study.json")).unwrap()).unwrap();
    assert_eq!(doc["regime"], "sparse");
    assert_eq!(doc["theoretical_slope"], -0.5);
    let risks = fs::read_to_string(dir.join("risks.csv")).unwrap();
    assert_eq!(risks.lines().count(), 1 + 4 * 4);
    let fit = fs::read_to_string(dir.join("fit.csv")).unwrap();
    assert!(fit.starts_with("ln_n,ln_risk,residual\n"));

    let wrong = write_spec(tmp.path(), "w.json", r#"{"theory": {"s": 1, "p": 2, "r": 2, "regime": "sparse"}}"#);
    assert_eq!(run(tmp.path(), &["--spec", &wrong, "rate-study"]).0, 2);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "bad.json", r#"{"scenario": {"mechanism": {"variant": "mechanism2", "nu": 3}}}"#);
    assert_eq!(run(tmp.path(), &["--spec", &spec, "privatize"]).0, 2);
    assert_eq!(run(tmp.path(), &["privatize", "--n", "0"]).0, 2);
    assert_eq!(run(tmp.path(), &["--spec", "missing.json", "privatize"]).0, 5);
}

#[test]
fn dump_basis_tabulates_the_father() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = ok(tmp.path(), &["dump-basis"]);
    let text = fs::read_to_string(dir.join("basis.csv")).unwrap();
    let phi1 = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .find(|r| r[0] == 1.0)
        .unwrap()[1];
    assert!((phi1 - (1.0 + 3f64.sqrt()) / 2.0).abs() < 1e-4);
}
