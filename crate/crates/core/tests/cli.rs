use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use glidepath::analytics::merton_ratio;

fn glidepath(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glidepath"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("GLIDEPATH_THREADS", n),
        None => cmd.env_remove("GLIDEPATH_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn exit_statuses() {
    assert_eq!(glidepath(&[], None).status.code(), Some(1));
    assert_eq!(glidepath(&["--version"], None).status.code(), Some(0));
    assert_eq!(glidepath(&["reproduce", "--target", "fig1"], None).status.code(), Some(1));
    assert_eq!(glidepath(&["run", "--config", "missing.cfg"], None).status.code(), Some(2));
    assert_eq!(glidepath(&["validate", "--paths", "0"], None).status.code(), Some(2));
    assert_eq!(glidepath(&["validate"], Some("many")).status.code(), Some(2));
}

#[test]
fn validate_prints_resolved_defaults() {
    let out = glidepath(&["validate"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = glidepath::config::parse_config(&text).unwrap();
    assert_eq!(cfg, glidepath::config::RunConfig::default());
    for key in ["theta = 0.0169", "gamma = 3.0", "pi_points = 31", "rho_c = 0.05"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[fund]\ngamma = 1.0\n").unwrap();
    let out = glidepath(&["validate", "--config", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fund.gamma"));
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn manifest_rerun_is_bit_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let cfg = dir.path().join("in.toml");
    fs::write(&cfg, "seed = 11\nscatter_times = [0.5]\n[fund]\nhorizon = 1.0\n[algo]\npaths = 3000\n").unwrap();
    let out = glidepath(
        &["run", "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap()],
        Some("1"),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let second = dir.path().join("second");
    let manifest = first.join("run_manifest.toml");
    let out = glidepath(
        &["run", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()],
        Some("3"),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["strategy_path.csv", "terminal_stats.csv", "scatter_t0.5.csv"] {
        assert_eq!(read(&first, name), read(&second, name), "{name} differs");
    }
    let stats = read(&first, "terminal_stats.csv");
    assert_eq!(stats.lines().count(), 2);
    assert_eq!(column(&stats, "n"), vec![3000.0]);
    assert_eq!(column(&stats, "seed"), vec![11.0]);
    assert_eq!(read(&first, "scatter_t0.5.csv").lines().count(), 3001);
}

#[test]
fn merton_target_gives_flat_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = glidepath(
        &["reproduce", "--target", "merton", "--paths", "20000", "--out", dir.path().to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let pi = column(&read(dir.path(), "strategy_path.csv"), "mean_pi");
    assert_eq!(pi.len(), 200);
    let target = merton_ratio(0.06, 0.02, 0.13, 3.0);
    let mean = pi.iter().sum::<f64>() / pi.len() as f64;
    assert!((mean - target).abs() < 0.03, "average {mean}");
    assert!(pi.iter().all(|p| (p - target).abs() < 0.3));
    let stats = read(dir.path(), "terminal_stats.csv");
    assert_eq!(stats.lines().nth(1).unwrap().split(',').next(), Some("merton"));
    glidepath::config::parse_config(&read(dir.path(), "run_manifest.toml")).unwrap();
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = glidepath(
        &[
            "sweep", "--axis", "rho_s", "--values", "0.9,-0.9", "--paths", "2000", "--horizon", "1",
            "--out", dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = read(dir.path(), "terminal_stats.csv");
    assert_eq!(stats.lines().count(), 3);
    for label in ["run_rho_s=0.9", "run_rho_s=-0.9"] {
        let cell = dir.path().join(label);
        assert!(cell.join("strategy_path.csv").exists());
        let cfg = glidepath::config::parse_config(&read(&cell, "run_manifest.toml")).unwrap();
        assert_eq!(cfg.algo.paths, 2000);
    }
}
