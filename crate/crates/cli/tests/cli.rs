use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const EXAMPLE: &str = r#"{
  "polynomial": [
    {"coeff": [1, 0], "word": [2, 1]},
    {"coeff": [1, 0], "word": [1, 2]},
    {"coeff": [1, 0], "word": [1, 1]}
  ],
  "theta": THETA,
  "base_measure": {"type": "atoms", "atoms": [[0, 1]]},
  "tail": {"rule": "quantile"},
  "entry_law": {"kind": "LAW"}
}"#;

const ADDITIVE: &str = r#"{
  "polynomial": [{"coeff": [1, 0], "word": [1]}, {"coeff": [1, 0], "word": [2]}],
  "theta": 2,
  "base_measure": {"type": "atoms", "atoms": [[0, 1]]},
  "entry_law": {"kind": "gue_complex"}
}"#;

fn example(theta: f64, law: &str) -> String {
    EXAMPLE.replace("THETA", &theta.to_string()).replace("LAW", law)
}

fn polyspike(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyspike"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_model(dir: &TempDir, text: &str) -> String {
    let path = dir.path().join("model.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run_in(dir: &TempDir, cmd: &str, model: &str, extra: &[&str]) -> Output {
    let out = dir.path().to_str().unwrap();
    let mut args = vec![cmd, "--config", model, "--out", out];
    args.extend_from_slice(extra);
    polyspike(&args)
}

#[test]
fn linearize_example() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, &example(2.0, "uniform_sqrt3"));
    let o = run_in(&dir, "linearize", &model, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let l = read_json(&dir.path().join("linearization.json"));
    assert_eq!(l["m"], 4);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("schur_residual"));
}

#[test]
fn linearize_degree_one_is_noted() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, ADDITIVE);
    let o = run_in(&dir, "linearize", &model, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("degree 1"));
}

#[test]
fn non_self_adjoint_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let text = ADDITIVE.replace(r#"{"coeff": [1, 0], "word": [1]}"#, r#"{"coeff": [1, 0], "word": [1, 2]}"#);
    let model = write_model(&dir, &text);
    assert_eq!(run_in(&dir, "linearize", &model, &[]).status.code(), Some(2));
}

#[test]
fn malformed_json_reports_location() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, "{\"polynomial\": [\n  {\"coeff\": [1, 0],");
    let o = run_in(&dir, "outliers", &model, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, &ADDITIVE.replace("\"theta\": 2", "\"theta\": 2, \"spike\": 1"));
    assert_eq!(run_in(&dir, "outliers", &model, &[]).status.code(), Some(2));
}

fn outliers_of(text: &str) -> Vec<f64> {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, text);
    let o = run_in(&dir, "outliers", &model, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("outliers.json"));
    v.as_array()
        .unwrap()
        .iter()
        .map(|o| {
            assert_eq!(o["multiplicity"], 1);
            o["rho"].as_f64().unwrap()
        })
        .collect()
}

#[test]
fn outliers_examples() {
    let two = outliers_of(&example(2.0, "uniform_sqrt3"));
    assert_eq!(two.len(), 2);
    assert!(two[0] < 0.0 && two[1] > 4.0);
    let one = outliers_of(&example(1.0, "uniform_sqrt3"));
    assert_eq!(one.len(), 1);
    assert!(one[0] < 0.0);
    let add = outliers_of(ADDITIVE);
    assert_eq!(add.len(), 1);
    assert!((add[0] - 2.5).abs() < 1e-9);
}

#[test]
fn fluct_coefficients() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, &example(2.0, "uniform_sqrt3"));
    let o = run_in(&dir, "fluct", &model, &[]);
    assert_eq!(o.status.code(), Some(0));
    let v = read_json(&dir.path().join("coefficients.json"));
    for c in v.as_array().unwrap() {
        assert!((c["C2"].as_f64().unwrap() + 4.0).abs() < 1e-9);
        assert!(c["C1"].as_f64().unwrap() < 0.0);
        assert_eq!(c["limit_law"]["kind"], "uniform_convolution");
        for key in ["rho", "rho_N", "v", "v_tilde", "entry_law"] {
            assert!(c.get(key).is_some(), "{key}");
        }
    }

    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, &example(2.0, "gue_complex"));
    assert_eq!(run_in(&dir, "fluct", &model, &[]).status.code(), Some(0));
    let v = read_json(&dir.path().join("coefficients.json"));
    assert_eq!(v[0]["limit_law"]["kind"], "gaussian");
}

#[test]
fn simulate_zero_trials() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, ADDITIVE);
    let o = run_in(&dir, "simulate", &model, &["--trials", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "N,trials,seed,rho,rho_N,C1");
}

#[test]
fn simulate_is_deterministic() {
    let runs: Vec<(String, String)> = (0..2)
        .map(|_| {
            let dir = TempDir::new().unwrap();
            let model = write_model(&dir, ADDITIVE);
            let o = run_in(&dir, "simulate", &model, &["--n", "100", "--trials", "40", "--seed", "7", "--ks-threshold", "1"]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            (
                fs::read_to_string(dir.path().join("samples.csv")).unwrap(),
                fs::read_to_string(dir.path().join("report.json")).unwrap(),
            )
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let report: Value = serde_json::from_str(&runs[0].1).unwrap();
    let excluded = report["targets"][0]["excluded"].as_u64().unwrap() as usize;
    assert_eq!(runs[0].0.lines().count(), 2 + 40 - excluded);
}

#[test]
fn simulate_report_has_predicted_parameters() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, &example(2.0, "uniform_sqrt3"));
    let o = run_in(
        &dir,
        "simulate",
        &model,
        &["--n", "150", "--trials", "30", "--outlier", "0", "--ks-threshold", "1"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("report.json"));
    let t = &r["targets"][0];
    assert_eq!(t["predicted_law"]["kind"], "uniform_convolution");
    assert!((t["predicted_law"]["params"]["c"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert!(t["predicted_law"]["params"]["sigma"].as_f64().unwrap() > 0.0);
    assert!(t["moments"]["variance"].as_f64().is_some());
    assert_eq!(r["settings"]["tol"], 1e-12);
}

#[test]
fn simulate_aborts_when_too_many_trials_are_excluded() {
    let dir = TempDir::new().unwrap();
    let model = write_model(&dir, ADDITIVE);
    let o = run_in(&dir, "simulate", &model, &["--n", "50", "--trials", "10", "--window", "1e-9"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn verify_example_exit_codes() {
    let o = polyspike(&["verify-example", "--theta", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let o = polyspike(&["verify-example", "--theta", "1.4142135623730951"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("support edge"));
    assert_eq!(polyspike(&["verify-example", "--theta", "0"]).status.code(), Some(2));
}

#[test]
fn missing_config_is_an_input_error() {
    let o = polyspike(&["outliers", "--config", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
}
