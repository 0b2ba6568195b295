use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sweep_cli::CliError;

fn sweep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sweep"))
        .args(args)
        .env("SWEEP_LOG", "off")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn solve_moving_wall_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"scenario": "builtin:moving-wall-1d", "steps": 100}"#);
    let out = dir.path().join("out");
    let res = sweep(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (header, rows) = read_csv(&out.join("trajectory_n100.csv"));
    assert_eq!(header, "t,q0");
    assert_eq!(rows.len(), 101);
    for row in &rows {
        assert!((row[1] - row[0]).abs() <= 1e-12);
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary_n100.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 100);
    assert!(summary["feasibility_margin"].as_f64().unwrap() >= -1e-9);
    assert!((summary["max_displacement"].as_f64().unwrap() - 0.01).abs() < 1e-12);
    assert!(summary["projection"]["max_residual"].is_number());
}

#[test]
fn far_apart_disks_walk_straight_at_desired_speed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": {"crowd": {"count": 2, "radius": 0.2, "room": {"width": 10, "height": 10},
            "exit_center": [10, 5], "desired_speed": 1, "initial_positions": [[2, 5], [5, 2]]}},
            "horizon": 1, "steps": 20}"#,
    );
    let out = dir.path().join("out");
    assert!(sweep(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let (header, rows) = read_csv(&out.join("trajectory_n20.csv"));
    assert_eq!(header, "t,q0,q1,q2,q3");
    let last = rows.last().unwrap();
    assert!((last[1] - 3.0).abs() < 1e-12 && (last[2] - 5.0).abs() < 1e-12);
    // The second disk heads for the exit along a straight line.
    let dir0 = [5.0 / 34f64.sqrt(), 3.0 / 34f64.sqrt()];
    assert!((last[3] - (5.0 + dir0[0])).abs() < 1e-9 && (last[4] - (2.0 + dir0[1])).abs() < 1e-9);
}

#[test]
fn convergence_of_moving_wall_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": "builtin:moving-wall-1d", "h_list": [0.01, 0.02, 0.05, 0.1, 0.2, 0.5], "h_min": 0.01}"#,
    );
    let out = dir.path().join("out");
    let res = sweep(&["convergence", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("convergence.json")).unwrap()).unwrap();
    assert_eq!(report["slope"], "exact");
    assert!(report["intercept"].is_null());
    assert!(report["points"].as_array().unwrap().iter().all(|p| p["e_h"] == 0.0));
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("h,e_h,included_in_fit"));
    assert_eq!(csv.lines().count(), 7);
    // h = h_min compares the reference with itself.
    let first = &report["points"][0];
    assert_eq!(first["h"], 0.01);
    assert_eq!(first["included_in_fit"], false);
}

#[test]
fn check_reports_derived_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": "builtin:halfplane-sweep-2d", "check_samples": 200,
            "params": {"alpha": 1, "beta": 1, "m_bound": 1, "rho": 1, "gamma": 1, "c_margin": 1, "k_lip": 1}}"#,
    );
    let out = dir.path().join("out");
    assert!(sweep(&["check", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]).status.success());
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(report["theta"], 2.0);
    assert_eq!(report["seed"], 3);
    assert_eq!(report["quadratic_bound_violations"], 0);
    assert_eq!(report["qualification_violations"], 0);
    assert!(report["eta"].is_number() && report["r_qual"].is_number());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        r#"{"scenario": "builtin:moving-wall-1d", "unexpected": true}"#,
        r#"{"scenario": "builtin:moving-wall-1d", "steps": 0}"#,
        r#"not json"#,
        r#"{"scenario": "builtin:moving-wall-1d", "h_list": [0.005], "h_min": 0.01}"#,
    ] {
        let cfg = write_config(dir.path(), text);
        let res = sweep(&["convergence", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&res.stderr).contains("config error"));
    }
}

#[test]
fn missing_config_file_is_an_io_error() {
    let res = sweep(&["solve", "--config", "/nonexistent/config.json"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn solver_errors_map_to_code_3_with_step_index() {
    let e = CliError::Solver(sweep_core::Error::Step {
        index: 17,
        source: Box::new(sweep_core::Error::ZeroGradient(2)),
    });
    assert_eq!(e.exit_code(), 3);
    assert_eq!(e.failing_step(), Some(17));
}

#[test]
fn seed_flag_changes_crowd_placement_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": {"crowd": {"count": 5, "radius": 0.2, "room": {"width": 10, "height": 10},
            "exit_center": [10, 5], "desired_speed": 1}}, "horizon": 0.5, "steps": 10}"#,
    );
    let mut outputs = Vec::new();
    for (name, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let out = dir.path().join(name);
        assert!(sweep(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]).status.success());
        outputs.push(fs::read(out.join("trajectory_n10.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
}
