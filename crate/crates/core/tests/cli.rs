use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "s_k": [[-5, -9], [5, -12]],
  "L": 4,
  "T": 3.0,
  "q_I": [-6, -11],
  "q_F": [4, -9]
}"#;

fn uavmec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavmec")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out");
    let o = uavmec(&["run", "--scenario", &scenario, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("GE 0"), "{stdout}");
    assert!(stdout.contains("GE 1"), "{stdout}");

    let log = rows(&out.join("runlog.csv"));
    assert!(!log.is_empty());
    let traj = rows(&out.join("trajectory_5.csv"));
    assert_eq!(traj.len(), 6);
    assert_eq!(traj[0][1..], ["-6".to_string(), "-11".to_string()]);
    assert_eq!(traj[5][1..], ["4".to_string(), "-9".to_string()]);

    let summary = rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 2);
    for row in &summary {
        let v: Vec<f64> = row.iter().map(|c| c.parse().unwrap()).collect();
        // remaining = harvested - compute - transmit
        assert!((v[4] - (v[1] - v[2] - v[3])).abs() <= 1e-9 * v[1].abs().max(1.0), "{row:?}");
    }
}

#[test]
fn run_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "small.json", SMALL);
    let mut summaries = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        let o = uavmec(&["run", "--scenario", &scenario, "--seed", "3", "--baseline", "no-trajectory", "--out-dir", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        summaries.push(fs::read_to_string(out.join("summary.csv")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn missing_scenario_is_an_input_error() {
    let o = uavmec(&["run", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn oversized_task_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"L\": 4,", "\"L\": 4, \"Gamma\": 1e9,");
    let scenario = write(dir.path(), "huge.json", &text);
    let out = dir.path().join("out");
    let o = uavmec(&["run", "--scenario", &scenario, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn empty_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = write(dir.path(), "sweep.json", r#"{"axis": "H", "values": []}"#);
    let o = uavmec(&["sweep", "--sweep", &sweep, "--out-dir", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn altitude_sweep_writes_series_and_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "small.json", SMALL);
    let sweep = write(dir.path(), "sweep.json", r#"{"axis": "H", "values": [5, 20], "baselines": ["full", "no-rho"], "seeds": [0]}"#);
    let out = dir.path().join("out");
    let o = uavmec(&["sweep", "--scenario", &scenario, "--sweep", &sweep, "--jobs", "1", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let results = rows(&out.join("results.csv"));
    assert_eq!(results.len(), 4);
    assert!(results.iter().all(|r| r[6] == "ok"), "{results:?}");
    assert_eq!(rows(&out.join("series_H.csv")).len(), 2);
    assert!(out.join("trajectory_5.csv").exists());
    assert!(out.join("trajectory_20.csv").exists());
    assert_eq!(rows(&out.join("trajectory_overlay.csv")).len(), 12);
}
