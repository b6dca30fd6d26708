mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scatter_breakdown::cli_io::{self, SWEEP_HEADER};
use scatter_breakdown::geometry;
use scatter_breakdown::model::Dataset;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scatter-breakdown"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn gen(dir: &Path, name: &str, n: usize, p: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let o = run(&["gen", "--n", &n.to_string(), "--p", &p.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_writes_general_position_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "x.csv", 40, 2, 7);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(text.starts_with("x1,x2\n"));
    let d = cli_io::read_dataset(&path, None).unwrap();
    assert_eq!((d.len(), d.dim()), (40, 2));
    assert!(geometry::is_general_position(&d));
    let meta = json(&cli_io::meta_path(&path));
    assert_eq!(meta["center"], serde_json::json!([0.0, 0.0]));

    let one = gen(dir.path(), "one.csv", 1, 1, 0);
    assert_eq!(std::fs::read_to_string(one).unwrap().lines().count(), 2);

    let o = run(&["gen", "--n", "2", "--p", "3", "--out", s(&dir.path().join("bad.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("bad.csv").exists());
}

#[test]
fn dataset_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = common::gaussian(25, 3, 99);
    let d = Dataset::new(d.points().to_vec(), nalgebra::DVector::from_vec(vec![0.1, -1.0 / 3.0, 7.0])).unwrap();
    let path = dir.path().join("d.csv");
    cli_io::write_dataset(&path, &d, None, None).unwrap();
    let back = cli_io::read_dataset(&path, None).unwrap();
    assert_eq!(back, d);
}

#[test]
fn estimate_four_point_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("four.csv");
    std::fs::write(&data, "x1,x2\n1,0\n-1,0\n0,1\n0,-1\n").unwrap();
    let out = dir.path().join("est.json");
    let o = run(&["estimate", "--data", s(&data), "--nu", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["status"], "CONVERGED");
    let m = &v["v"];
    for (i, j, want) in [(0, 0, 0.5), (0, 1, 0.0), (1, 0, 0.0), (1, 1, 0.5)] {
        assert!((m[i][j].as_f64().unwrap() - want).abs() < 1e-10);
    }
    assert_eq!(v["distances"].as_array().unwrap().len(), 4);
    assert!(v["residual"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn estimate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let x = gen(dir.path(), "x.csv", 30, 2, 3);
    let mut text = std::fs::read_to_string(&x).unwrap();
    for _ in 0..31 {
        text.push_str("0,0\n");
    }
    let z = dir.path().join("z.csv");
    std::fs::write(&z, text).unwrap();
    let out = dir.path().join("z.json");
    let o = run(&["estimate", "--data", s(&z), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&out)["status"], "NONEXISTENT");

    let o = run(&["estimate", "--data", s(&dir.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "IO");

    let line = dir.path().join("line.csv");
    std::fs::write(&line, "1,1\n2,2\n-1,-1\n").unwrap();
    let o = run(&["estimate", "--data", s(&line)]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(err["error"], "DEGENERATE_INPUT");

    let o = run(&["estimate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn coplanar_outlier_sweep_summary() {
    let dir = tempfile::tempdir().unwrap();
    let x = gen(dir.path(), "x.csv", 40, 2, 7);
    let out = dir.path().join("sweep.csv");
    let o = run(&[
        "sweep", "--data", s(&x), "--class", "coplanar-outlier", "--m", "0..=30", "--max-iter", "20000", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), SWEEP_HEADER);
    assert_eq!(csv.lines().count(), 1 + 31 * 4);
    assert!(!csv.contains('\r'));
    let summary = json(&dir.path().join("sweep.csv.summary.json"));
    assert_eq!(summary["theoretical_delta_star"]["delta_star_lower"].as_f64().unwrap(), 0.25);
    let eps = summary["estimate_delta_star"]["epsilon_hat"].as_f64().unwrap();
    let res = summary["estimate_delta_star"]["grid_resolution"].as_f64().unwrap();
    assert!((0.25..=0.25 + res).contains(&eps), "{eps}");

    // identical inputs give identical bytes
    let again = dir.path().join("again.csv");
    let o = run(&[
        "sweep", "--data", s(&x), "--class", "coplanar-outlier", "--m", "0..=30", "--max-iter", "20000", "--out", s(&again),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn gp_cloud_sweep_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let x = gen(dir.path(), "x.csv", 20, 2, 1);
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[solver]\nmax_iter = 20000\n[sweep]\nm = [0, 10, 30, 40]\nmagnitudes = [1e4, 1e8]\nseeds = [3]\n").unwrap();
    let out = dir.path().join("gp.csv");
    let o = run(&["sweep", "--data", s(&x), "--class", "gp-cloud", "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&dir.path().join("gp.csv.summary.json"));
    assert_eq!(summary["theoretical_delta_star"]["delta_star_lower"].as_f64().unwrap(), 0.5);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 4 * 2);

    let o = run(&["sweep", "--data", s(&x), "--class", "gp-cloud", "--m", "", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn spectral_modes() {
    let dir = tempfile::tempdir().unwrap();
    let x = gen(dir.path(), "x.csv", 30, 2, 2);
    let out = dir.path().join("collapse.csv");
    let o = run(&["spectral", "--mode", "collapse", "--data", s(&x), "--m", "15", "--max-iter", "20000", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let theta: Vec<f64> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(theta.len(), 3);
    assert!(theta.windows(2).all(|w| w[1] < w[0]));
    let report = json(&dir.path().join("collapse.csv.json"));
    assert_eq!(report["window"]["window_violation"], false);

    let clean = dir.path().join("report.json");
    let o = run(&["spectral", "--mode", "report", "--data", s(&x), "--out", s(&clean)]);
    assert!(o.status.success());
    assert_eq!(json(&clean)["suspects"], serde_json::json!([]));

    let small = gen(dir.path(), "small.csv", 12, 2, 2);
    let range = dir.path().join("range.csv");
    let o = run(&["spectral", "--mode", "range", "--data", s(&small), "--m", "10", "--out", s(&range)]);
    assert!(o.status.success());
    assert_eq!(json(&dir.path().join("range.csv.json"))["window"]["window_violation"], true);
}
