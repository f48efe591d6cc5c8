use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn quadhook(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadhook")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn plan_writes_plan_csv_timing_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = quadhook(&["plan", "--sample-rate", "100"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let timing = json(&dir.path().join("timing.json"));
    assert_eq!(timing["qp_ms"].as_array().unwrap().len(), 5);
    assert!(timing["socp_ms"].as_array().unwrap().len() >= 5);
    let duration = timing["duration"].as_f64().unwrap();

    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.ends_with('\n'));
    let rows = csv.lines().count() - 1;
    let on_lattice = (100.0 * duration).floor() as usize + 1;
    assert!(rows == on_lattice || rows == on_lattice + 1, "{rows} rows for T = {duration}");

    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "plan");
    assert_eq!(manifest["exit_code"], 0);
    for name in ["plan.json", "trajectory.csv", "timing.json"] {
        assert_eq!(manifest["artifacts"][name].as_str().unwrap().len(), 64);
    }
}

#[test]
fn degenerate_start_exits_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"mission": {"r0": [1.0, 0.0, 0.1], "r_L_init": [1.0, 0.0, 0.1],
        "n_hook": [1.0, 0.0, 0.0], "r_L_target": [1.0, 2.0, 0.1], "target_yaw": 1.57, "r_F": [0.5, 2.5, 1.0]}}"#,
    );
    let out = quadhook(&["plan", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("segment 1"));
    let manifest = json(&dir.path().join("out/manifest.json"));
    assert_eq!(manifest["exit_code"], 2);
}

#[test]
fn simulate_is_deterministic_and_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let plan_dir = dir.path().join("plan");
    assert_eq!(quadhook(&["plan"], &plan_dir).status.code(), Some(0));
    let plan = plan_dir.join("plan.json");
    let sums: Vec<Value> = (0..2)
        .map(|i| {
            let out_dir = dir.path().join(format!("sim{i}"));
            let out = quadhook(&["simulate", "--plan", plan.to_str().unwrap(), "--payload-mass", "0.1"], &out_dir);
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
            let m = json(&out_dir.join("metrics.json"));
            assert!(m["rmse"].as_f64().unwrap() < 0.05);
            json(&out_dir.join("manifest.json"))["artifacts"].clone()
        })
        .collect();
    assert_eq!(sums[0], sums[1]);
}

#[test]
fn misplaced_payload_exits_grasp_failed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"sim": {"payload_offset": [0.0, 0.1, 0.0]}}"#);
    let out = quadhook(&["simulate", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn lqr_gain_is_hurwitz() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(quadhook(&["lqr"], dir.path()).status.code(), Some(0));
    let gain = json(&dir.path().join("lqr.json"));
    assert_eq!(gain["hurwitz"], true);
    assert_eq!(gain["K"].as_array().unwrap().len(), 4);
    assert_eq!(gain["K"][0].as_array().unwrap().len(), 14);
}

#[test]
fn verify_writes_certificate_with_formula_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let out = quadhook(&["verify", "--n", "16", "--beta", "1e-6", "--seed", "3", "--jobs", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(cert["N"], 16);
    assert_eq!(cert["decision"], "stable");
    assert_eq!(cert["seed"], 3);
    let eps = 1.0 - (1e-6f64 / 256.0).powf(1.0 / 15.0);
    assert!((cert["epsilon"].as_f64().unwrap() - eps).abs() < 1e-12);
}

#[test]
fn bounds_reports_both_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"bounds": {"settings": {"starts": 4, "probes": 200, "ascent_iters": 10, "inflation": 1.1, "seed": 1}}}"#,
    );
    let out = quadhook(&["bounds", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let b = json(&dir.path().join("out/bounds.json"));
    assert!(b["delta_r"].as_f64().unwrap() > 0.0);
    assert!(b["delta_R"].as_f64().unwrap() > 0.0);
}

#[test]
fn tune_single_point_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"tune": {"lower": [1.46, 0.2, 0.1, 0.5], "upper": [1.46, 0.2, 0.1, 0.5], "grid": [1, 1, 1, 1], "scenario_count": 1}}"#,
    );
    let out = quadhook(&["tune", "--config", cfg.to_str().unwrap(), "--method", "grid"], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = json(&dir.path().join("out/tune.json"));
    assert_eq!(t["v_max"], 1.46);
    assert_eq!(t["evaluations"], 1);
    let csv = std::fs::read_to_string(dir.path().join("out/evaluations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn tune_without_feasible_point_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"tune": {"lower": [1.46, 0.2, 0.0, 0.5], "upper": [1.46, 0.2, 0.0, 0.5], "grid": [1, 1, 1, 1], "scenario_count": 1}}"#,
    );
    let out = quadhook(&["tune", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn reproduce_chains_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = quadhook(&["reproduce", "--n", "8"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&dir.path().join("summary.json"));
    let scenarios = s["scenarios"].as_array().unwrap();
    assert_eq!(scenarios.len(), 4);
    for sc in scenarios {
        assert!(sc["metrics"]["grasp_distance"].as_f64().unwrap() <= 0.02);
    }
    assert_eq!(s["certificate_decision"], "stable");
}

#[test]
fn bad_config_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"nonsense": 1}"#);
    let out = quadhook(&["plan", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    let out = quadhook(&["fly"], dir.path());
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn guide_config_example_is_accepted() {
    let guide = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../book/src/cli.md")).unwrap();
    let start = guide.find("```json\n").unwrap() + "```json\n".len();
    let len = guide[start..].find("```").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &guide[start..start + len]);
    let out = quadhook(&["plan", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
