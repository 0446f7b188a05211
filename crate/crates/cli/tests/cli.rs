use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trp"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .current_dir(dir)
        .env_remove("TRP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn simulated(dir: &Path, n: &str) {
    let out = trp(
        dir,
        &["--seed", "7", "simulate", "--n", n, "--out", "m.csv"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs `args` in two fresh directories holding the same simulated market and
/// asserts identical stdout and identical output files.
fn assert_reproducible(args: &[&str]) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulated(a.path(), "300");
    simulated(b.path(), "300");
    let x = trp(a.path(), args);
    let y = trp(b.path(), args);
    assert!(
        x.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&x.stderr)
    );
    assert_eq!(x.stdout, y.stdout, "{args:?}");
    assert_eq!(files(a.path()), files(b.path()), "{args:?}");
}

const CHEAP: [&str; 6] = [
    "--qmc-points",
    "64",
    "--qmc-shifts",
    "2",
    "--rel-tol",
    "1e-3",
];

#[test]
fn every_subcommand_is_reproducible() {
    assert_reproducible(&["--seed", "3", "simulate", "--n", "50", "--out", "s.csv"]);
    assert_reproducible(&["estimate", "--input", "m.csv", "--out", "fit.json"]);
    let mut ew = vec!["--seed", "1", "expected-wealth", "--n", "4"];
    ew.extend(CHEAP);
    assert_reproducible(&ew);
    let mut opt = vec![
        "--seed",
        "2",
        "optimize",
        "--n",
        "3",
        "--b-min",
        "0.3",
        "--b-max",
        "0.7",
        "--b-step",
        "0.2",
        "--eps-max",
        "0.1",
        "--eps-step",
        "0.05",
        "--surface",
        "surface.csv",
        "--out",
        "opt.json",
    ];
    opt.extend(CHEAP);
    assert_reproducible(&opt);
    let mut bt = vec![
        "backtest",
        "--input",
        "m.csv",
        "--window",
        "100",
        "--horizon",
        "2",
        "--b-min",
        "0.3",
        "--b-max",
        "0.7",
        "--b-step",
        "0.2",
        "--eps-max",
        "0.1",
        "--eps-step",
        "0.05",
        "--svg",
    ];
    bt.extend(CHEAP);
    assert_reproducible(&bt);
    assert_reproducible(&["--seed", "5", "mvn-debug", "--dim", "4", "--tridiagonal"]);
}

#[test]
fn simulate_writes_one_row_per_period() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "1100");
    let text = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("date,x1,x2"));
    assert_eq!(lines.count(), 1100);
}

#[test]
fn seed_changes_the_market() {
    let dir = tempfile::tempdir().unwrap();
    trp(
        dir.path(),
        &["--seed", "1", "simulate", "--n", "5", "--out", "a.csv"],
    );
    trp(
        dir.path(),
        &["--seed", "2", "simulate", "--n", "5", "--out", "b.csv"],
    );
    assert_ne!(
        fs::read(dir.path().join("a.csv")).unwrap(),
        fs::read(dir.path().join("b.csv")).unwrap()
    );
}

#[test]
fn expected_wealth_table_has_one_row_per_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["expected-wealth", "--n", "10"];
    args.extend(CHEAP);
    let out = trp(dir.path(), &args);
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("horizon.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "i,stay_p,fc_p,pr,pt,es");
    assert_eq!(rows.len(), 11);
    assert!(rows[10].starts_with("10,"));
}

#[test]
fn mvn_debug_reports_the_dense_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = trp(
        dir.path(),
        &[
            "mvn-debug",
            "--dim",
            "3",
            "--box",
            "-1",
            "1",
            "--tridiagonal",
        ],
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let (p, err, dense) = (
        v["p"].as_f64().unwrap(),
        v["err"].as_f64().unwrap(),
        v["dense"].as_f64().unwrap(),
    );
    assert!((p - dense).abs() <= (3.0 * err).max(1e-3));
    let big = trp(dir.path(), &["mvn-debug", "--dim", "6"]);
    let v: serde_json::Value = serde_json::from_slice(&big.stdout).unwrap();
    assert!(v.get("dense").is_none());
    // Identity covariance factorizes.
    let expect = (0.841_344_746_068_542_9f64 - 0.158_655_253_931_457_05).powi(6);
    assert!((v["p"].as_f64().unwrap() - expect).abs() < 1e-6);
}

#[test]
fn estimate_recovers_json_fields() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "2000");
    let out = trp(dir.path(), &["estimate", "--input", "m.csv"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n_samples"], 2000);
    assert!((v["var1"].as_f64().unwrap() - 0.05).abs() < 0.01);
}

#[test]
fn config_is_logged_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = trp(dir.path(), &["--seed", "9", "simulate", "--n", "3"]);
    let first = String::from_utf8_lossy(&out.stderr)
        .lines()
        .next()
        .unwrap()
        .to_owned();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["command"], "simulate");
    assert_eq!(v["seed"], 9);
    assert_eq!(v["config"]["n"], 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| trp(dir.path(), args).status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["simulate", "--bogus-key", "1"]), Some(1));
    assert_eq!(code(&["simulate", "--var1", "-1"]), Some(1));
    assert_eq!(code(&["expected-wealth", "--n", "41"]), Some(1));
    assert_eq!(code(&["estimate", "--input", "missing.csv"]), Some(1));
}
