use std::path::Path;
use std::process::{Command, Output};

use mqrif::io::{load_csv, DatasetSchema};
use tempfile::TempDir;

fn mqrif(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mqrif"))
        .args(args)
        .current_dir(dir)
        .env_remove("MQRIF_THREADS")
        .output()
        .expect("binary runs")
}

fn simulated(n: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = mqrif(dir.path(), &["simulate", "--n", n, "--seed", "11", "--output", "data.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn read_theta(path: &Path) -> Vec<f64> {
    let body = std::fs::read_to_string(path).unwrap();
    let row = body.lines().nth(1).unwrap();
    row.split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mqrif(dir.path(), &["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mqrif(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mqrif(dir.path(), &["fit", "--data", "absent.csv", "--responses", "y1,y2", "--c", "1", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn cv_with_fixed_c_is_rejected() {
    let dir = simulated("60");
    let out = mqrif(dir.path(), &["cv", "--data", "data.csv", "--responses", "y1,y2", "--c", "1", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = simulated("60");
    std::fs::write(dir.path().join("run.toml"), "colour = 3\n").unwrap();
    let out = mqrif(dir.path(), &["--config", "run.toml", "simulate", "--output", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn large_c_fit_matches_column_means() {
    let dir = simulated("80");
    let out = mqrif(dir.path(), &["fit", "--data", "data.csv", "--responses", "y1,y2", "--c", "1e6", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = load_csv(dir.path().join("data.csv"), &DatasetSchema::new(&["y1", "y2"], &[])).unwrap();
    let theta = read_theta(&dir.path().join("o/theta.csv"));
    for j in 0..2 {
        let mean = ds.y.column(j).mean();
        assert!((theta[2 + j] - mean).abs() < 1e-10, "column {j}: {} vs {mean}", theta[2 + j]);
    }
}

#[test]
fn flags_override_config_file() {
    let dir = simulated("80");
    std::fs::write(
        dir.path().join("run.toml"),
        "data = \"data.csv\"\nresponses = [\"y1\", \"y2\"]\nc = 1e6\ntau = [0.25]\n",
    )
    .unwrap();
    let from_file = mqrif(dir.path(), &["--config", "run.toml", "fit", "--out", "a"]);
    assert!(from_file.status.success(), "{}", String::from_utf8_lossy(&from_file.stderr));
    assert_eq!(read_theta(&dir.path().join("a/theta.csv"))[0], 0.25);

    let overridden = mqrif(dir.path(), &["--config", "run.toml", "fit", "--tau", "0.5", "--out", "b"]);
    assert!(overridden.status.success());
    let theta = read_theta(&dir.path().join("b/theta.csv"));
    assert_eq!(theta[0], 0.5);
    assert_eq!(theta[1], 1e6);
}

#[test]
fn simulate_is_reproducible_and_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out =
            mqrif(dir.path(), &["simulate", "--kind", "contaminated", "--n", "40", "--seed", "5", "--output", name]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());

    let other =
        mqrif(dir.path(), &["simulate", "--kind", "contaminated", "--n", "40", "--seed", "6", "--output", "c.csv"]);
    assert!(other.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.csv")).unwrap());

    let ds = load_csv(dir.path().join("a.csv"), &DatasetSchema::new(&["y1", "y2"], &["x1", "x2"])).unwrap();
    assert_eq!(ds.y.nrows(), 40);
    assert_eq!(ds.covariates.len(), 2);
    assert_eq!(ds.dropped, 0);
}

#[test]
fn manifest_holds_no_paths() {
    let dir = simulated("60");
    let out = mqrif(dir.path(), &["fit", "--data", "data.csv", "--responses", "y1,y2", "--c", "1.345", "--out", "o"]);
    assert!(out.status.success());
    let body = std::fs::read_to_string(dir.path().join("o/manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert!(!body.contains(&*dir.path().to_string_lossy()));
}

#[test]
fn contour_writes_vertices_for_each_level() {
    let dir = simulated("120");
    let out = mqrif(
        dir.path(),
        &[
            "contour",
            "--data",
            "data.csv",
            "--responses",
            "y1,y2",
            "--c",
            "0",
            "--tau",
            "0.1,0.3",
            "--directions",
            "24",
            "--out",
            "o",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for tau in ["0.1", "0.3"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("o/contour_tau{tau}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 25);
        assert!(dir.path().join(format!("o/contour_tau{tau}.svg")).exists());
    }
}
