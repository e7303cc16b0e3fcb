//! End-to-end checks of the `bregopt` binary: exit codes, files written by a
//! sweep, and the oracle, certify, and grid subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bregopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bregopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, out_dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    fs::write(&path, format!("{body}output_dir = {}\n", out_dir.display())).expect("config");
    path
}

const SMALL: &str = "n = 8\nr = 1\nlambda = 1.0\nseed = 7\nsolvers = bgd, bpalm\n\
                     init_scales = 0.5\nmax_iters = 3000\n";

#[test]
fn run_writes_outputs_and_exits_zero() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out_dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &out_dir, SMALL);
    let out = bregopt(&["run", cfg.to_str().expect("path")]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bgd"), "per-run lines missing:\n{stdout}");
    assert!(stdout.contains("summary"), "summary path missing:\n{stdout}");
    for f in ["summary.json", "plot_data.csv", "instance.mat", "instance.json"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    assert!(out_dir.join("traces").read_dir().expect("traces").next().is_some());
    assert!(out_dir.join("points").read_dir().expect("points").next().is_some());
}

#[test]
fn oracle_prints_certified_optimum() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out_dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &out_dir, SMALL);
    assert!(bregopt(&["run", cfg.to_str().expect("path")]).status.success());

    let base = out_dir.join("instance");
    let out = bregopt(&["oracle", base.to_str().expect("path")]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("oracle value"), "missing oracle value:\n{stdout}");
    assert!(stdout.contains("factored value"), "missing factored value:\n{stdout}");
}

#[test]
fn certify_classifies_a_converged_point() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out_dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &out_dir, SMALL);
    assert!(bregopt(&["run", cfg.to_str().expect("path")]).status.success());

    let point = fs::read_dir(out_dir.join("points"))
        .expect("points dir")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("bgd")))
        .expect("a bgd point file");
    let base = out_dir.join("instance");
    let out = bregopt(&[
        "certify",
        base.to_str().expect("path"),
        point.to_str().expect("path"),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"class\""), "not a report:\n{stdout}");
    assert!(stdout.contains("second_order_stationary"), "unexpected class:\n{stdout}");
}

#[test]
fn grid_prints_best_step_sizes() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &out_dir,
        "n = 6\nr = 1\nlambda = 0.5\nseed = 3\nsolvers = gd\ninit_scales = 0.5\nmax_iters = 400\n",
    );
    let out = bregopt(&["grid", cfg.to_str().expect("path")]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("best gd"), "no winner line:\n{stdout}");
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &out_dir,
        "n = 6\nr = 9\nsolvers = bgd\n",
    );
    let out = bregopt(&["run", cfg.to_str().expect("path")]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "no diagnostic:\n{stderr}");
}

#[test]
fn missing_config_exits_one() {
    let out = bregopt(&["run", "/nonexistent/exp.cfg"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = bregopt(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}
