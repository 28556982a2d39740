//! Binary-level contract tests: exit codes, report shape, overrides, and
//! the CSV sidecar format.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_spectracontrol"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spectracontrol-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .current_dir(out.parent().unwrap())
        .output()
        .unwrap()
}

#[test]
fn passing_run_exits_zero_with_schema_one_summary() {
    let dir = scratch("pass");
    let out = dir.join("summary.json");
    let output = run(&["grid-info", "--grid", "1:64:16:1"], &out);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["command"], "grid-info");
    for row in summary["rows"].as_array().unwrap() {
        for key in ["name", "lhs", "rhs", "slack", "pass"] {
            assert!(row.get(key).is_some(), "row lacks {key}: {row}");
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn lambda_above_nyquist_is_a_schema_error_naming_the_field() {
    let dir = scratch("nyquist");
    let symbol = configs().join("heat_symbol.json");
    let output = run(
        &[
            "prop",
            "dissipation",
            "--symbol",
            symbol.to_str().unwrap(),
            "--grid",
            "1:64:16:1",
            "--lambda-grid",
            "4,99",
            "--t-grid",
            "0.5",
        ],
        &dir.join("summary.json"),
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("lambda_grid[1]"), "stderr does not name the field: {stderr}");
    assert!(stderr.contains("Nyquist"), "stderr does not explain the bound: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unresolvable_file_reference_is_a_schema_error() {
    let dir = scratch("missing");
    let output =
        run(&["control", "run", "--problem", "does_not_exist.json"], &dir.join("summary.json"));
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("does_not_exist.json"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_config_field_is_a_schema_error() {
    let dir = scratch("unknown");
    std::fs::write(dir.join("bad.json"), r#"{"grid": "1:64:16:1", "bogus": true}"#).unwrap();
    let output =
        run(&["grid-info", "--config", "bad.json"], &dir.join("summary.json"));
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("bogus"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn failed_assertion_exits_one_and_serializes_the_first_counterexample() {
    let dir = scratch("assert");
    let set = configs().join("stripes_half.json");
    let out = dir.join("summary.json");
    let output = run(
        &[
            "thick",
            "verify",
            "--config",
            configs().join("thick_verify.json").to_str().unwrap(),
            "--override",
            &format!("set={}", set.display()),
            "--override",
            "rho_min=0.9",
        ],
        &out,
    );
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("assertion failed"), "missing counterexample marker: {stderr}");
    let row_json = stderr.split("assertion failed:").nth(1).unwrap().trim();
    let row: serde_json::Value = serde_json::from_str(row_json).unwrap();
    assert_eq!(row["pass"], false);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let first_failing = summary["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["pass"] == false)
        .unwrap();
    assert_eq!(&row, first_failing);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn empty_probe_writes_a_header_only_csv() {
    let dir = scratch("empty");
    let out = dir.join("summary.json");
    let output = run(
        &[
            "ls",
            "cubes",
            "--grid",
            "1:64:16:1",
            "--band",
            "4",
            "--A",
            "2.0",
            "--override",
            "ensemble=0",
        ],
        &out,
    );
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().contains(','), "header row missing");
    assert_eq!(lines.next(), None, "expected no data rows");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sidecar_dictionary_matches_the_csv_header() {
    let dir = scratch("sidecar");
    let out = dir.join("summary.json");
    let set = configs().join("stripes_half.json");
    let output = run(
        &["ls", "probe", "--set", set.to_str().unwrap(), "--lambda", "4", "--seed", "7"],
        &out,
    );
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("summary.columns.json")).unwrap()).unwrap();
    let documented = sidecar.as_object().unwrap();
    assert_eq!(documented.len(), header.len());
    for column in header {
        assert!(documented.contains_key(column), "column {column} missing from sidecar");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn flags_override_config_scalars() {
    let dir = scratch("override");
    std::fs::write(dir.join("cfg.json"), r#"{"grid": "1:64:16:1"}"#).unwrap();
    let out = dir.join("summary.json");
    let output = run(&["grid-info", "--config", "cfg.json", "--grid", "1:128:16:1"], &out);
    assert_eq!(output.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(summary["details"]["points"], 128);
    std::fs::remove_dir_all(&dir).ok();
}
