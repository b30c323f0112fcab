use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stability-lab"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path.display().to_string()
}

fn four_way(trials: u64) -> Value {
    json!({
        "id": "four_way",
        "seed": 7,
        "trials": trials,
        "data": {"kind": "uniform", "size": 256},
        "algorithm": {"kind": "oracle", "sample_size": 3, "laws": [[[0, 0.30], [1, 0.25], [2, 0.24], [3, 0.21]]]},
        "transforms": [{"kind": "glob2rep", "eta": 0.25, "rho": 0.45, "runs": 400}],
        "verifiers": [{"check": {"kind": "replicability"}, "expect": {"min": 0.5414, "bits": 3}}]
    })
}

fn stdout_rows(out: &Output) -> Vec<Vec<String>> {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn run_writes_identical_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "four_way.json", &four_way(1000));
    let a = run(&["run", &cfg, "--output", "out/a.csv"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&["run", &cfg, "--output", "out/b.csv"], dir.path());
    assert_eq!(b.status.code(), Some(0));
    let csv_a = std::fs::read(dir.path().join("out/a.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(dir.path().join("out/b.csv")).unwrap());
    assert_eq!(csv_a, a.stdout);
    let summary: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/a.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], json!(true));
    assert_eq!(summary["rows"][0]["bits_used"], json!(3));
}

#[test]
fn failing_expectation_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = four_way(500);
    v["verifiers"][0]["expect"] = json!({"bits": 2});
    let cfg = write(dir.path(), "c.json", &v);
    let out = run(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_rows(&out)[0][9], "fail");
}

#[test]
fn schema_errors_name_the_file_and_seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = four_way(500);
    v["surprise"] = json!(1);
    let cfg = write(dir.path(), "bad.json", &v);
    let out = run(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("surprise"), "{err}");

    let mut v = four_way(200);
    v.as_object_mut().unwrap().remove("seed");
    let cfg = write(dir.path(), "noseed.json", &v);
    let out = run(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let out = run(&["run", &cfg, "--master-seed", "99"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn master_seed_changes_estimates_within_ci() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = four_way(2000);
    v["algorithm"]["laws"] = json!([[[0, 0.5], [1, 0.5]]]);
    v["transforms"] = json!([]);
    v["verifiers"] = json!([{"check": {"kind": "global_stability"}}]);
    let cfg = write(dir.path(), "c.json", &v);
    let a = stdout_rows(&run(&["run", &cfg, "--master-seed", "1"], dir.path()));
    let b = stdout_rows(&run(&["run", &cfg, "--master-seed", "2"], dir.path()));
    assert_ne!(a[0][6], b[0][6]);
    let (x, y): (f64, f64) = (a[0][3].parse().unwrap(), b[0][3].parse().unwrap());
    let ci: f64 = a[0][4].parse().unwrap();
    assert!((x - y).abs() <= 2.0 * ci, "{x} {y} {ci}");
}

#[test]
fn sweep_over_rho_reports_grid_points_and_monotone_bits() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = four_way(300);
    v["verifiers"][0]["expect"] = Value::Null;
    let cfg = write(dir.path(), "c.json", &v);
    let grid = write(dir.path(), "g.json", &json!({"/transforms/0/rho": [0.45, 0.25, 0.1]}));
    let out = run(&["sweep", &cfg, "--grid", &grid], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = stdout_rows(&out);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][1], "/transforms/0/rho=0.45");
    let bits: Vec<usize> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    assert_eq!(bits, vec![3, 4, 5]);
}

#[test]
fn dp2stab_sweep_fails_above_the_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "id": "gate",
        "seed": 1,
        "trials": 200,
        "data": {"kind": "uniform", "size": 2},
        "algorithm": {"kind": "randomized_response", "bits": 2, "keep": 0, "sample_size": 2},
        "transforms": [{"kind": "dp2stab", "users": 2, "epsilon": 0.1, "delta": 0.06}],
        "verifiers": [{"check": {"kind": "global_stability"}, "expect": {"min": 0.0}}]
    });
    let cfg = write(dir.path(), "c.json", &v);
    let grid = write(dir.path(), "g.json", &json!({"/transforms/0/epsilon": [0.05, 0.5]}));
    let out = run(&["sweep", &cfg, "--grid", &grid], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let rows = stdout_rows(&out);
    assert_eq!((rows[0][2].as_str(), rows[0][9].as_str()), ("global_stability", "pass"));
    assert_eq!((rows[1][2].as_str(), rows[1][9].as_str()), ("build", "error"));
}

#[test]
fn audit_dp_writes_witness() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({"id": "mb", "seed": 3, "data": {"kind": "uniform", "size": 2}, "algorithm": {"kind": "majority_bit", "n": 3}});
    let cfg = write(dir.path(), "mb.json", &v);
    let out = run(
        &[
            "audit-dp",
            &cfg,
            "--domain",
            "2",
            "--n",
            "3",
            "--epsilon",
            "1",
            "--witness",
            "w.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let w: Value = serde_json::from_slice(&std::fs::read(dir.path().join("w.json")).unwrap()).unwrap();
    assert_eq!(w["delta"], json!(1.0));
    let pair = w["witness"].as_array().unwrap();
    let (a, b) = (pair[0].as_array().unwrap(), pair[1].as_array().unwrap());
    assert_eq!(a.iter().zip(b).filter(|(x, y)| x != y).count(), 1);
}

#[test]
fn stab2dp_audit_passes() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({"id": "mb", "seed": 3, "data": {"kind": "uniform", "size": 2}, "algorithm": {"kind": "majority_bit", "n": 3}});
    let cfg = write(dir.path(), "mb.json", &v);
    let args = [
        "stab2dp",
        &cfg,
        "--epsilon",
        "1",
        "--delta",
        "0.05",
        "--users",
        "3",
        "--outputs",
        "2",
        "--list-runs",
        "1",
        "--audit-domain",
        "2",
        "--audit-n",
        "9",
    ];
    let out = run(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = stdout_rows(&out);
    assert_eq!(rows[0][2], "delta_max");
    assert!(rows[0][3].parse::<f64>().unwrap() <= 0.05);
}

#[test]
fn run_transform_reports_before_and_after() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({"id": "mb", "seed": 3, "trials": 300, "data": {"kind": "uniform", "size": 2}, "algorithm": {"kind": "majority_bit", "n": 3}});
    let cfg = write(dir.path(), "mb.json", &v);
    let args = [
        "run-transform",
        &cfg,
        "--transform",
        "glob2rep",
        "--params",
        r#"{"eta":0.5,"rho":0.3,"runs":100}"#,
        "--task",
        r#"{"kind":"oracle","outputs":2}"#,
    ];
    let out = run(&args, dir.path());
    let rows = stdout_rows(&out);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let labels: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(labels, ["before", "before", "before", "after", "after", "after"]);
    assert_eq!(rows[0][7], "0");
    assert_eq!(rows[3][7], "2");
}

#[test]
fn pac_experiment_needs_seed_and_runs_small() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "pac-experiment",
        "--learner-sample-size",
        "16",
        "--runs",
        "4",
        "--glob-runs",
        "16",
        "--trials",
        "50",
    ];
    assert_eq!(run(&small, dir.path()).status.code(), Some(2));
    let mut args = small.to_vec();
    args.extend(["--master-seed", "5"]);
    let out = run(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = stdout_rows(&out);
    assert_eq!(rows[0][2], "replicability");
    assert_eq!(rows[1][2], "failure_rate");
}
