//! End-to-end runs of the `dctmap` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dctmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dctmap"))
        .current_dir(dir)
        .env_remove("DCTMAP_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A smooth 2×2 map over a 10 m square and scans simulated from it.
fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("truth.txt"), "2 2 10 10\n0.7 0.2\n-0.15 0.1\n").unwrap();
    let out = dctmap(
        dir.path(),
        &["simulate", "--map", "truth.txt", "--seed", "7", "--out", "scans.txt", "--poses", "6", "--beams-per-pose", "40"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn build_dct_writes_a_map_and_report() {
    let dir = fixture();
    let out = dctmap(
        dir.path(),
        &["build-dct", "--input", "scans.txt", "--out", "map.txt", "--report", "report.json", "--rows", "3", "--cols", "3"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("build-dct 3x3"));
    let map = fs::read_to_string(dir.path().join("map.txt")).unwrap();
    assert!(map.starts_with("3 3 10 10\n"));
    let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(report.contains("\"converged\": true"));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dctmap(dir.path(), &["build-dct", "--input", "nowhere.log", "--out", "map.txt"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.log"));
    assert!(!dir.path().join("map.txt").exists());
}

#[test]
fn iteration_cap_exits_with_two() {
    let dir = fixture();
    let out = dctmap(
        dir.path(),
        &[
            "build-dct", "--input", "scans.txt", "--out", "map.txt", "--rows", "4", "--cols", "4", "--max-iters", "1",
            "--rel-tol", "1e-12", "--init", "noise", "--init-seed", "3",
        ],
    );
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("map.txt").exists());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = fixture();
    fs::write(dir.path().join("run.toml"), "[fit]\nrows = 2\ncols = 2\n").unwrap();
    let out = dctmap(dir.path(), &["--config", "run.toml", "build-dct", "--input", "scans.txt", "--out", "map.txt"]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(dir.path().join("map.txt")).unwrap().starts_with("2 2 "));

    fs::write(dir.path().join("bad.toml"), "[fit]\nsize = 2\n").unwrap();
    let out = dctmap(dir.path(), &["--config", "bad.toml", "build-dct", "--input", "scans.txt", "--out", "map.txt"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn check_grads_passes_on_the_fixture() {
    let dir = fixture();
    let out = dctmap(dir.path(), &["check-grads", "--map", "truth.txt", "--scans", "scans.txt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("\"pass\":true"));
    let out = dctmap(dir.path(), &["check-grads", "--map", "truth.txt", "--scans", "scans.txt", "--order", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let out = dctmap(
        dir.path(),
        &["check-grads", "--map", "truth.txt", "--scans", "scans.txt", "--step", "0.5", "--tolerance", "1e-12"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn render_of_a_single_coefficient_map() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("one.txt"), "1 1 1 1\n0\n").unwrap();
    let out = dctmap(dir.path(), &["render", "--map", "one.txt", "--out", "one.pgm", "--size", "1"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(dir.path().join("one.pgm")).unwrap(), b"P5\n1 1\n255\n\x00");

    fs::write(dir.path().join("dense.txt"), "1 1 1 1\n10\n").unwrap();
    dctmap(dir.path(), &["render", "--map", "dense.txt", "--out", "dense.pgm", "--size", "1"]);
    assert_eq!(fs::read(dir.path().join("dense.pgm")).unwrap(), b"P5\n1 1\n255\n\xff");
}

#[test]
fn simulate_is_reproducible() {
    let dir = fixture();
    let again = dctmap(
        dir.path(),
        &["simulate", "--map", "truth.txt", "--seed", "7", "--out", "again.txt", "--poses", "6", "--beams-per-pose", "40", "--threads", "2"],
    );
    assert_eq!(code(&again), 0);
    let a = fs::read(dir.path().join("scans.txt")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("again.txt")).unwrap());
    dctmap(dir.path(), &["simulate", "--map", "truth.txt", "--seed", "8", "--out", "other.txt"]);
    assert_ne!(a, fs::read(dir.path().join("other.txt")).unwrap());
}

#[test]
fn grid_build_render_and_eval() {
    let dir = fixture();
    let out = dctmap(dir.path(), &["build-grid", "--input", "scans.txt", "--out", "grid.txt", "--cells", "8"]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(dir.path().join("grid.txt")).unwrap().starts_with("8 8 1.25 0 0\n"));
    let out = dctmap(dir.path(), &["render", "--map", "grid.txt", "--out", "grid.pgm", "--size", "16"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(dir.path().join("grid.pgm")).unwrap().len(), "P5\n16 16\n255\n".len() + 256);

    let out = dctmap(
        dir.path(),
        &[
            "eval", "--input", "scans.txt", "--truth-map", "truth.txt", "--report", "eval.jsonl", "--csv", "eval.csv",
            "--images", "img", "--resolutions", "2,3", "--truth-cells", "40",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("eval.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(dir.path().join("eval.csv")).unwrap().lines().count(), 3);
    for name in ["truth.pgm", "dct_2.pgm", "grid_2.pgm", "dct_3.pgm", "grid_3.pgm"] {
        assert!(dir.path().join("img").join(name).exists(), "{name}");
    }
}

#[test]
fn usage_errors_exit_with_64() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.txt"), "1 1 1 1\n0.5\n").unwrap();
    // --seed is mandatory
    let out = dctmap(dir.path(), &["simulate", "--map", "m.txt", "--out", "s.txt"]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    assert_eq!(code(&dctmap(dir.path(), &["frobnicate"])), 64);
    assert_eq!(code(&dctmap(dir.path(), &["check-grads", "--map", "m.txt", "--scans", "x", "--order", "3"])), 64);
    assert_eq!(code(&dctmap(dir.path(), &["--help"])), 0);
}
