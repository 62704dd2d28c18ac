use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bvtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bvtrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// A cheap solver setup: few random starts, a coarse grid candidate, two outer
/// iterations.
fn quick_config(dir: &Path) -> String {
    let p = path(dir, "config.json");
    fs::write(&p, r#"{"q_starts": 3, "grid_points": 40, "max_outer_iters": 2}"#).unwrap();
    p
}

#[test]
fn simulate_solve_certify_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = path(d, "data.json");
    let csv = path(d, "f.csv");
    let out = bvtrack(&["simulate", "--spec", "crossing", "--out", &data, "--csv", &csv]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&data).unwrap()).unwrap();
    assert_eq!(json["f"].as_array().unwrap().len(), 100);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 100);

    let cfg = quick_config(d);
    let recon = path(d, "recon.json");
    let log = path(d, "iters.csv");
    let out = bvtrack(&[
        "solve", "--data", &data, "--config", &cfg, "--alpha", "13", "--beta", "5", "--seed", "4", "--out", &recon,
        "--log", &log,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("MaxIters"), "{stdout}");
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(&recon).unwrap()).unwrap();
    assert_eq!(result["config"]["alpha"], 13.0);
    assert_eq!(result["config"]["q_starts"], 3);
    assert_eq!(result["seed"], 4);
    let lines = fs::read_to_string(&log).unwrap();
    assert!(lines.starts_with("k,fidelity,regularizer,objective"));
    assert_eq!(lines.lines().count(), 1 + 3);

    let out = bvtrack(&["certify", "--data", &data, "--recon", &recon]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let fig = path(d, "fig.svg");
    let res = path(d, "res.svg");
    let out = bvtrack(&["plot", "--recon", &recon, "--truth", &data, "--out", &fig, "--residuals", &res]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&fig).unwrap().starts_with("<svg"));
    assert!(fs::read_to_string(&res).unwrap().contains("</svg>"));
}

#[test]
fn tampered_reconstruction_fails_certification() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = path(d, "data.json");
    assert!(bvtrack(&["simulate", "--spec", "three_curves", "--out", &data]).status.success());
    let cfg = quick_config(d);
    let recon = path(d, "recon.json");
    assert!(bvtrack(&["solve", "--data", &data, "--config", &cfg, "--out", &recon]).status.success());

    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&recon).unwrap()).unwrap();
    let m = v["atoms"][0]["mass"].as_f64().unwrap();
    v["atoms"][0]["mass"] = serde_json::json!(m * 1.5);
    fs::write(&recon, serde_json::to_string(&v).unwrap()).unwrap();
    let out = bvtrack(&["certify", "--data", &data, "--recon", &recon]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn w1_of_point_measures() {
    let dir = tempfile::tempdir().unwrap();
    let a = path(dir.path(), "a.json");
    let b = path(dir.path(), "b.json");
    fs::write(&a, "[[0.0, 0.5], [1.0, 0.5]]").unwrap();
    fs::write(&b, "[[0.5, 1.0]]").unwrap();
    let out = bvtrack(&["w1", "--a", &a, "--b", &b]);
    assert!(out.status.success());
    let d: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((d - 0.5).abs() < 1e-15);

    fs::write(&b, "[[0.5, 2.0]]").unwrap();
    let out = bvtrack(&["w1", "--a", &a, "--b", &b]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = bvtrack(&["simulate", "--spec", "no_such_thing", "--out", &path(d, "x.json")]);
    assert_eq!(out.status.code(), Some(2));

    let data = path(d, "data.json");
    assert!(bvtrack(&["simulate", "--spec", "diffuse_mu", "--out", &data]).status.success());
    let out = bvtrack(&["solve", "--data", &data, "--eps-stop=-1", "--out", &path(d, "r.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid input"));

    let out = bvtrack(&["solve", "--data", &path(d, "missing.json"), "--out", &path(d, "r.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overflowing_data_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = path(d, "data.json");
    assert!(bvtrack(&["simulate", "--spec", "three_curves", "--out", &data]).status.success());
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&data).unwrap()).unwrap();
    for row in v["f"].as_array_mut().unwrap() {
        for x in row.as_array_mut().unwrap() {
            *x = serde_json::json!(1e308);
        }
    }
    fs::write(&data, serde_json::to_string(&v).unwrap()).unwrap();
    let cfg = quick_config(d);
    let out = bvtrack(&["solve", "--data", &data, "--config", &cfg, "--out", &path(d, "r.json")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
