use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn skewflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skewflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("SKEWFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn report(dir: &Path, out: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(out).join("report.json")).unwrap()).unwrap()
}

const MINIMAL: &str = r#"{"operator": {"kind": "minimal_derivative", "n": 64}}"#;
const J: &str = r#"{"operator": {"kind": "matrix", "data": [[0, -1], [1, 0]]}, "domain": {"mode": "full"}}"#;

#[test]
fn analyze_reports_unit_deficiency() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", MINIMAL);
    let out = skewflow(&["analyze", "--input", "spec.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "o");
    assert_eq!(r["d_plus"], 1);
    assert_eq!(r["d_minus"], 1);
    assert_eq!(r["pass"], true);
}

#[test]
fn reports_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", MINIMAL);
    for o in ["a", "b"] {
        let out = skewflow(&["analyze", "--input", "spec.json", "--out", o, "--seed", "7"], tmp.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(tmp.path().join("a/report.json")).unwrap();
    let b = fs::read(tmp.path().join("b/report.json")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("e-"), "floats use scientific notation");
}

#[test]
fn witness_on_full_domain_exits_two() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", J);
    let out = skewflow(&["witness", "--input", "spec.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("forward problem unique"));
    assert_eq!(report(tmp.path(), "o")["forward_unique"], true);
}

#[test]
fn witness_on_minimal_operator_passes() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", MINIMAL);
    let out = skewflow(&["witness", "--input", "spec.json", "--out", "o", "--t0", "0.5"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "o");
    assert_eq!(r["exp_solution"]["pass"], true);
    assert_eq!(r["semigroup_solution"]["pass"], true);
    let csv = fs::read_to_string(tmp.path().join("o/residuals.csv")).unwrap();
    assert!(csv.starts_with("solution,spatial,profile,residual"));
}

#[test]
fn multiplicity_separates_two_semigroups() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", MINIMAL);
    let out = skewflow(
        &["multiplicity", "--input", "spec.json", "--out", "o", "--horizon", "2"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "o");
    assert!(r["separation"].as_f64().unwrap() >= 0.1);
    let sols = r["solutions"].as_array().unwrap();
    assert_eq!(sols.len(), 2);
    assert!(sols.iter().all(|s| s["pass"] == true));
}

#[test]
fn unrealizable_coupling_is_a_verification_failure() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", MINIMAL);
    let out = skewflow(&["extend", "--input", "spec.json", "--out", "o", "--theta", "-1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not dense"));
    let ok = skewflow(&["extend", "--input", "spec.json", "--out", "p", "--theta", "1"], tmp.path());
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(report(tmp.path(), "p")["extension"]["full_domain"], true);
}

#[test]
fn evolve_writes_trajectory_csv() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", J);
    let out = skewflow(
        &["evolve", "--input", "spec.json", "--out", "o", "--dt", "0.01", "--horizon", "1", "--stride", "10"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("o/trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,norm,u0,u1");
    assert_eq!(lines.len(), 1 + 11);
    let last: Vec<f64> = lines[11].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - 1.0).abs() < 1e-12);
    assert!((last[1] - 1.0).abs() < 1e-12);
    // u' = -Ju rotates (1, 0) clockwise.
    assert!((last[2] - 1f64.cos()).abs() < 1e-4);
    assert!((last[3] + 1f64.sin()).abs() < 1e-4);
}

#[test]
fn exact_and_cayley_agree() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", MINIMAL);
    for (o, m) in [("c", "cayley"), ("e", "exact")] {
        let out = skewflow(
            &["evolve", "--input", "spec.json", "--out", o, "--method", m, "--dt", "1e-3", "--horizon", "0.5"],
            tmp.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let c = report(tmp.path(), "c")["trajectory"]["final_norm"].as_f64().unwrap();
    let e = report(tmp.path(), "e")["trajectory"]["final_norm"].as_f64().unwrap();
    assert!((c - e).abs() < 1e-10);
}

#[test]
fn verify_passes_for_semigroup_trajectory() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", MINIMAL);
    let out = skewflow(&["verify", "--input", "spec.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(tmp.path(), "o")["gs"]["pass"], true);
}

#[test]
fn transport_from_csv_stream() {
    let tmp = TempDir::new().unwrap();
    let n = 16;
    let grid = skewflow::transport::Grid::square(n).unwrap();
    let psi = skewflow::transport::solid_rotation_stream(&grid);
    let rows: Vec<String> = (0..n)
        .map(|i| (0..n).map(|j| format!("{:e}", psi[i * n + j])).collect::<Vec<_>>().join(","))
        .collect();
    write(tmp.path(), "psi.csv", &(rows.join("\n") + "\n"));
    write(
        tmp.path(),
        "spec.json",
        r#"{"operator": {"kind": "transport", "stream": "psi.csv", "mode": "periodic_full", "n": 16}}"#,
    );
    let out = skewflow(&["analyze", "--input", "spec.json", "--out", "a"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "a");
    assert_eq!((r["d_plus"].as_u64(), r["d_minus"].as_u64()), (Some(0), Some(0)));
    let out = skewflow(
        &["transport-run", "--input", "spec.json", "--out", "t", "--horizon", "0.5", "--dt", "0.005"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "t");
    assert!(r["trajectory"]["energy_drift"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn transport_header_file() {
    let tmp = TempDir::new().unwrap();
    let grid = skewflow::transport::Grid::square(12).unwrap();
    let psi = skewflow::transport::cellular_stream(&grid);
    skewflow::transport::write_stream_file(
        &tmp.path().join("field.json"),
        &grid,
        &psi,
        skewflow::transport::SampleFormat::F64le,
    )
    .unwrap();
    write(
        tmp.path(),
        "spec.json",
        r#"{"operator": {"kind": "transport", "stream": "field.json"}, "domain": {"mode": "interior_domain"}}"#,
    );
    let out = skewflow(&["analyze", "--input", "spec.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "o");
    assert_eq!(r["operator"]["domain_dim"], 64);
    assert!(r["d_plus"].as_u64().unwrap() > 0);
}

#[test]
fn transport_run_rejects_plain_operator() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", J);
    let out = skewflow(&["transport-run", "--input", "spec.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_check_without_input() {
    let tmp = TempDir::new().unwrap();
    let out = skewflow(&["oracle-check", "--out", "o", "--horizon", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path(), "o");
    assert_eq!(r["halfline"]["right"]["d_plus"], 1);
    assert_eq!(r["halfline"]["left"]["d_minus"], 1);
}

#[test]
fn schema_errors_carry_line_numbers() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.json", "{\n  \"operator\": {\n    \"kind\": \"cubic\"\n  }\n}\n");
    let out = skewflow(&["analyze", "--input", "bad.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:3:"), "{err}");

    write(tmp.path(), "dims.json", "{\n  \"operator\": {\n    \"kind\": \"matrix\",\n    \"data\": [[0, 1], [-1, 0]],\n    \"rows\": 3\n  }\n}\n");
    let out = skewflow(&["analyze", "--input", "dims.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dims.json:4:"));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", J);
    let out = skewflow(&["evolve", "--input", "spec.json", "--dt", "-1"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = skewflow(&["analyze"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = skewflow(&["analyze", "--input", "missing.json"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_cap_is_honored() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "spec.json", J);
    let out = Command::new(env!("CARGO_BIN_EXE_skewflow"))
        .args(["analyze", "--input", "spec.json", "--out", "o"])
        .current_dir(tmp.path())
        .env("SKEWFLOW_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_skewflow"))
        .args(["analyze", "--input", "spec.json", "--out", "o"])
        .current_dir(tmp.path())
        .env("SKEWFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
