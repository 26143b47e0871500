//! End-to-end tests driving the compiled `scenplan` binary.

use std::path::Path;
use std::process::{Command, Output};

fn scenplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// 1-D planning problem on the x-axis: two obstacle modes at roughly
/// [-2,-1] and [1,2], ego pulled toward the origin by an |y_1| objective.
/// The intrinsic decision dimension of the per-cluster interval cover is 2,
/// giving the 401-samples-per-cluster certificate at eps=0.05, beta=0.01.
fn line_config() -> &'static str {
    r#"{
  "model": {
    "dt": 0.5, "horizon": 1, "x0": [0.0, 0.0, 0.0, 0.0],
    "speed_bound": 100.0, "accel_bound": 100.0,
    "state_lower": [-50.0, 0.0, -100.0, 0.0],
    "state_upper": [50.0, 0.0, 100.0, 0.0],
    "input_lower": [-100.0, 0.0],
    "input_upper": [100.0, 0.0],
    "output_lower": [-50.0, 0.0],
    "output_upper": [50.0, 0.0]
  },
  "objective": {
    "absolute": [{"var": {"output": {"t": 1, "coord": 0}}, "weight": 1.0, "reference": 0.0}]
  },
  "risk": {"epsilon": 0.05, "beta": 0.01, "n_continuous": 2},
  "prediction": {
    "source": "generator", "seed": 42, "kind": "uniform-mixture-1d",
    "intervals": [[-2.0, -1.0], [1.0, 2.0]], "weights": [0.5, 0.5]
  },
  "method": "clusters",
  "clustering": {"strategy": "labels", "seed": 0}
}"#
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

// --- bound ---------------------------------------------------------------

#[test]
fn bound_prints_reference_sample_counts() {
    for (args, n) in [
        (["0.05", "0.01", "1", "2"], "191"),
        (["0.025", "0.005", "2", "0"], "401"),
        (["0.05", "0.001", "20", "40"], "1706"),
    ] {
        let out = scenplan(&[
            "bound", "--eps", args[0], "--beta", args[1], "--nc", args[2], "--nb", args[3],
        ]);
        assert_eq!(exit(&out), 0, "{}", stderr(&out));
        assert!(
            stdout(&out).contains(&format!("N: {n}")),
            "expected N: {n} in {}",
            stdout(&out)
        );
        assert!(stdout(&out).contains("confidence:"));
    }
}

#[test]
fn bound_rejects_bad_arguments() {
    let out = scenplan(&["bound", "--eps", "1.5", "--beta", "0.01", "--nc", "1", "--nb", "0"]);
    assert_eq!(exit(&out), 4);
    assert!(stderr(&out).contains("epsilon"));

    // Missing required flags are usage errors, not "infeasible".
    let out = scenplan(&["bound", "--eps", "0.05"]);
    assert_eq!(exit(&out), 4);
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(exit(&scenplan(&["--help"])), 0);
    assert_eq!(exit(&scenplan(&["--version"])), 0);
}

// --- plan ----------------------------------------------------------------

#[test]
fn plan_writes_the_default_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), line_config());
    let out_dir = dir.path().join("out");
    let out = scenplan(&["plan", "--config", &cfg, "--out-dir", &out_dir.display().to_string()]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("status: optimal"));

    let plan_text = std::fs::read_to_string(out_dir.join("plan.json")).unwrap();
    let plan: scenplan::config::PlanFile = serde_json::from_str(&plan_text).unwrap();
    assert!(plan.generated_at_unix_s > 0);
    // Both obstacle modes sit at least 1 away from the origin with
    // footprint half-length 0.1, so staying put is optimal.
    assert!(plan.plan.objective.abs() < 1e-9);

    let traj = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x,y,vx,vy,ux,uy"));
    let poly = std::fs::read_to_string(out_dir.join("polytopes.csv")).unwrap();
    assert!(poly.starts_with("t,ov,cluster,halfspace,normal_x,normal_y,offset"));
}

#[test]
fn plan_reports_blocked_problems_as_infeasible() {
    // Obstacle mass right on the origin and an output box narrower than
    // the obstacle footprint: every reachable output is inside the cover.
    let cfg_text = line_config()
        .replace(
            r#""output_lower": [-50.0, 0.0],
    "output_upper": [50.0, 0.0]"#,
            r#""output_lower": [-0.05, 0.0],
    "output_upper": [0.05, 0.0]"#,
        )
        .replace(
            r#""intervals": [[-2.0, -1.0], [1.0, 2.0]], "weights": [0.5, 0.5]"#,
            r#""intervals": [[-0.01, 0.01]], "weights": [1.0]"#,
        );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &cfg_text);
    let out = scenplan(&["plan", "--config", &cfg, "--out-dir", &dir.path().display().to_string()]);
    assert_eq!(exit(&out), 2, "{}\n{}", stdout(&out), stderr(&out));
    let diag: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(diag["status"], "infeasible");
    assert!(!diag["blocking"].as_array().unwrap().is_empty());
    assert_eq!(diag["blocking"][0]["t"], 1);
}

#[test]
fn plan_rejects_malformed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": "not an object"}"#);
    let out = scenplan(&["plan", "--config", &cfg]);
    assert_eq!(exit(&out), 4);

    let out = scenplan(&["plan", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(exit(&out), 4);
}

// --- validate ------------------------------------------------------------

#[test]
fn validate_passes_a_fresh_plan_and_flags_a_doctored_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), line_config());
    let out_dir = dir.path().display().to_string();
    let out = scenplan(&["plan", "--config", &cfg, "--out-dir", &out_dir]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let plan_path = dir.path().join("plan.json");
    let report_path = dir.path().join("violation.json");

    let out = scenplan(&[
        "validate",
        "--plan",
        &plan_path.display().to_string(),
        "--config",
        &cfg,
        "--samples",
        "20000",
        "--report",
        &report_path.display().to_string(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let report: scenplan::validation::ViolationReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.fresh_samples, 20000);
    assert!(report.violation_fraction <= 0.05);

    // Pin the plan inside the right-hand obstacle mode: ~10% of fresh
    // samples (x in (1.4, 1.6), mode weight 0.5) now collide, which is
    // far above the 5% risk level.
    let mut doctored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    doctored["plan"]["outputs"] = serde_json::json!([[1.5, 0.0]]);
    let bad_path = dir.path().join("doctored.json");
    std::fs::write(&bad_path, serde_json::to_string(&doctored).unwrap()).unwrap();

    let out = scenplan(&[
        "validate",
        "--plan",
        &bad_path.display().to_string(),
        "--config",
        &cfg,
        "--samples",
        "20000",
        "--report",
        &report_path.display().to_string(),
    ]);
    assert_eq!(exit(&out), 3, "{}\n{}", stdout(&out), stderr(&out));
    let report: scenplan::validation::ViolationReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(
        report.violation_fraction > 0.05 && report.violation_fraction < 0.15,
        "fraction {}",
        report.violation_fraction
    );
}

#[test]
fn validate_rejects_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), line_config());
    let out_dir = dir.path().display().to_string();
    let out = scenplan(&["plan", "--config", &cfg, "--out-dir", &out_dir]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let plan_path = dir.path().join("plan.json").display().to_string();
    let out = scenplan(&[
        "validate", "--plan", &plan_path, "--config", &cfg, "--samples", "0",
    ]);
    assert_eq!(exit(&out), 4);
}

// --- certify -------------------------------------------------------------

#[test]
fn certify_reports_run_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), line_config());
    let report_path = dir.path().join("confidence.json");
    let out = scenplan(&[
        "certify",
        "--config",
        &cfg,
        "--runs",
        "2",
        "--fresh",
        "500",
        "--report",
        &report_path.display().to_string(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let report: scenplan::validation::ConfidenceReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.runs, 2);
    assert_eq!(report.feasible_runs + report.infeasible_runs, 2);
    assert!(report.cover_bound_held);
}

// --- gen / cluster -------------------------------------------------------

#[test]
fn gen_roundtrips_through_the_sample_loader() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), line_config());
    let out_path = dir.path().join("draws.samples");
    let out = scenplan(&[
        "gen",
        "--config",
        &cfg,
        "--out",
        &out_path.display().to_string(),
        "--samples",
        "25",
        "--stream",
        "validate",
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let set = scenplan::prediction::load_samples(&out_path).unwrap();
    assert_eq!(set.num_samples, 25);
    assert_eq!(set.horizon, 1);
    assert_eq!(set.num_ovs, 1);
    assert!(set.labels.is_some());

    let out = scenplan(&[
        "gen",
        "--config",
        &cfg,
        "--out",
        &out_path.display().to_string(),
        "--stream",
        "bogus",
    ]);
    assert_eq!(exit(&out), 4);
}

#[test]
fn cluster_prints_per_cluster_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), line_config());
    let out = scenplan(&["cluster", "--config", &cfg, "--samples", "200"]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("vehicle 0:"));
    assert!(text.contains("cluster 1"));
    assert!(text.contains("cluster 2"));
    assert!(text.contains("p=0.5"));
}
