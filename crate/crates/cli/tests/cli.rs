//! End-to-end tests of the binary: exit-code contract, JSON shape, golden
//! CSV files for the figure-reproducing sweeps.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impact-game"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(path).expect("golden file")
}

fn write_temp(dir: &tempfile::TempDir, name: &str, content: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn solve_emits_policy_json() {
    let cfg = repo_config("default.toml");
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let m_aim = json["policy"]["m_aim"].as_f64().unwrap();
    assert!(m_aim > 0.0 && m_aim < 0.7, "m_aim = {m_aim}");
    assert!(json["report"]["converged"].as_bool().unwrap());
    assert_eq!(json["report"]["residuals"].as_array().unwrap().len(), 10);
}

#[test]
fn malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_temp(&dir, "bad.toml", "beta = -1\n");
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_field_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_temp(
        &dir,
        "gamma0.toml",
        "beta = 0.07\nsigma = 1.5e-4\nrho = 4e-5\ngamma = 0.0\nlambda = 1.88e-10\nn_agents = 2\n",
    );
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gamma"), "{stderr}");
}

#[test]
fn infeasible_lambda_exits_two() {
    // far beyond the float-precision envelope of the solved branch
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_temp(
        &dir,
        "huge.toml",
        "beta = 0.07\nsigma = 1.5e-4\nrho = 4e-5\ngamma = 1.936e-12\nlambda = 1e7\nn_agents = 2\n",
    );
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("branch invalid") || stderr.contains("no convergence"),
        "{stderr}"
    );
}

#[test]
fn compare_matches_golden() {
    let cfg = repo_config("default.toml");
    let out = run(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--scaling",
        "mean-field",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&out.stdout),
        golden("compare_mean_field.csv")
    );
}

#[test]
fn compare_values_ordered_and_fractions_in_range() {
    let cfg = repo_config("default.toml");
    let out = run(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--scaling",
        "mean-field",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    let mut values = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        values.push(cells[3].parse::<f64>().unwrap());
        let frac: f64 = cells[4].parse().unwrap();
        assert!(frac > 0.0 && frac <= 1.0, "{line}");
    }
    // rows are open_loop, closed_loop, central_planner
    assert!(values[0] <= values[1] && values[1] <= values[2]);
    assert!(values[1] / values[0] >= 1.0);
}

#[test]
fn n_sweep_matches_golden() {
    let cfg = repo_config("default.toml");
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "n-agents",
        "--values",
        "2..10",
        "--scaling",
        "mean-field",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&out_path).unwrap(),
        golden("n_sweep_mean_field.csv")
    );
}

#[test]
fn lambda_sweep_matches_golden() {
    let cfg = repo_config("default.toml");
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "lambda",
        "--values",
        "1.88e-10,1.88e-11,1.88e-12,1.88e-13,1.88e-14",
        "--scaling",
        "raw",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&out_path).unwrap(),
        golden("lambda_sweep_raw.csv")
    );
}

#[test]
fn lambda_sweep_gap_shrinks_like_sqrt_lambda() {
    // the |cl_rate_mult - cl_asym_rate_mult| column shrinks by ~sqrt(10)
    // per lambda decade
    let text = golden("lambda_sweep_raw.csv");
    let mut gaps = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let mult: f64 = cells[2].parse().unwrap();
        let asym: f64 = cells[5].parse().unwrap();
        gaps.push((mult - asym).abs());
    }
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.58..6.33).contains(&ratio), "ratios {gaps:?}");
    }
}

#[test]
fn n_sweep_rows_keep_three_curve_ordering() {
    // rate and value orderings hold row-wise across a 2..50 mean-field sweep
    let cfg = repo_config("default.toml");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "n-agents",
        "--values",
        "2..50",
        "--scaling",
        "mean-field",
        "--columns",
        "cp_rate_mult,cl_rate_mult,ol_rate_mult,cp_value,cl_value,ol_value",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let nums: Vec<f64> = cells[1..7].iter().map(|c| c.parse().unwrap()).collect();
        assert!(
            nums[0] <= nums[1] && nums[1] <= nums[2],
            "rates out of order: {line}"
        );
        assert!(
            nums[5] <= nums[4] && nums[4] <= nums[3],
            "values out of order: {line}"
        );
        assert_eq!(cells[7], "ok");
    }
}

#[test]
fn sweep_partial_failure_exits_three() {
    let cfg = repo_config("default.toml");
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "lambda",
        "--values",
        "1.88e-10,1e7",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[1].ends_with(",ok"));
    assert!(lines[2].contains("error:"), "{}", lines[2]);
}

#[test]
fn sweep_rejects_unknown_column() {
    let cfg = repo_config("default.toml");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "n-agents",
        "--values",
        "2,3",
        "--columns",
        "no_such_column",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_rejects_n_below_two() {
    let cfg = repo_config("default.toml");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "n-agents",
        "--values",
        "1..3",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_is_deterministic() {
    let cfg = repo_config("default.toml");
    let a = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "n-agents",
        "--values",
        "2..20",
        "--scaling",
        "mean-field",
    ]);
    let b = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--variable",
        "n-agents",
        "--values",
        "2..20",
        "--scaling",
        "mean-field",
    ]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_within_band_and_deviation() {
    let cfg = repo_config("mc.toml");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--dt",
        "0.25",
        "--horizon",
        "200",
        "--paths",
        "2000",
        "--seed",
        "7",
        "--deviate",
        "1.2",
        "--strict",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["within_3se"], serde_json::Value::Bool(true));
    assert_eq!(
        json["deviations"][0]["nash_holds"],
        serde_json::Value::Bool(true)
    );
}

#[test]
fn simulate_zero_paths_exits_one() {
    let cfg = repo_config("mc.toml");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--paths",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_strict_band_violation_exits_four() {
    // a 5-day step makes the reward quadrature visibly biased; with enough
    // paths the 3-SE band must fail and --strict must report it
    let cfg = repo_config("mc.toml");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--dt",
        "5",
        "--horizon",
        "200",
        "--paths",
        "60000",
        "--seed",
        "3",
        "--strict",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["within_3se"], serde_json::Value::Bool(false));
}

#[test]
fn simulate_insufficient_horizon_exits_one() {
    let cfg = repo_config("default.toml");
    // the default calibration needs a ~115000-day horizon; 200 days must be
    // rejected as a config error
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--dt",
        "0.25",
        "--horizon",
        "200",
        "--paths",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("discount coverage"), "{stderr}");
}
