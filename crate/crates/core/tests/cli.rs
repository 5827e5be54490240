use std::path::Path;
use std::process::{Command, Output};

use airfl_core::config::{Scheme, SystemConfig};

fn airfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airfl")).args(args).output().expect("binary runs")
}

fn header(path: &Path) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.headers().unwrap().iter().map(str::to_owned).collect()
}

#[test]
fn simulate_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = airfl(&["--trials", "2", "--rounds", "6", "simulate", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rounds = header(&out.join("rounds.csv"));
    for col in ["trial", "t", "train_loss", "mse", "dp_eps"] {
        assert!(rounds.iter().any(|c| c == col), "rounds.csv lacks {col}: {rounds:?}");
    }
    assert!(header(&out.join("summary.csv")).iter().any(|c| c == "train_loss_mean"));
    let rows = csv::Reader::from_path(out.join("rounds.csv")).unwrap().records().count();
    assert_eq!(rows, 2 * 6);
    let saved = SystemConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!((saved.trials, saved.rounds), (2, 6));
}

#[test]
fn config_file_round_trips_through_emit_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    let cfg = SystemConfig { n: 4, m: 9, scheme: Scheme::AirflZf, eps_tilde: 0.4, ..Default::default() };
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let res = airfl(&["--config", path.to_str().unwrap(), "--d", "12", "--emit-config", "validate"]);
    assert!(res.status.success());
    let back = SystemConfig::from_toml_str(&String::from_utf8(res.stdout).unwrap()).unwrap();
    assert_eq!(back, SystemConfig { d: 12, ..cfg });
}

#[test]
fn invalid_configuration_exits_with_code_2() {
    let res = airfl(&["--n", "30", "--m", "5", "simulate", "--out", "unused"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "antennas = 4\n").unwrap();
    assert_eq!(airfl(&["--config", path.to_str().unwrap(), "validate"]).status.code(), Some(2));
}

#[test]
fn sweep_reports_every_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let res = airfl(&[
        "--trials",
        "2",
        "--rounds",
        "4",
        "sweep",
        "--axis",
        "eps",
        "--values",
        "0.1,0.8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows: Vec<csv::StringRecord> =
        csv::Reader::from_path(out.join("sweep.csv")).unwrap().records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * Scheme::ALL.len());
    assert!(out.join("sweep_rounds.csv").exists());
}

#[test]
fn privacy_curve_and_optimize_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let alloc = dir.path().join("alloc.csv");
    assert!(airfl(&["--diameter", "1e-3", "privacy-curve", "--out", curve.to_str().unwrap()]).status.success());
    assert!(header(&curve).iter().any(|c| c == "dp_eps"));
    assert!(airfl(&["optimize", "--out", alloc.to_str().unwrap()]).status.success());
    let rows = csv::Reader::from_path(&alloc).unwrap().records().count();
    assert_eq!(rows, SystemConfig::default().rounds);
}

#[test]
fn validate_passes() {
    let res = airfl(&["validate"]);
    assert!(res.status.success());
    assert!(!String::from_utf8_lossy(&res.stdout).contains("FAIL"));
}
