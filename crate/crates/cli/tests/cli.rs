use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nlhomog(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlhomog"))
        .args(args)
        .env("NLHOMOG_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run_dir(out: &Output) -> PathBuf {
    let stdout = String::from_utf8_lossy(&out.stdout);
    PathBuf::from(stdout.lines().next().expect("run directory printed"))
}

#[test]
fn one_dimensional_cell_matches_harmonic_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nlhomog(tmp.path(), &["cell", "--config", &config("cell_1d.json"), "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = run_dir(&out);
    let csv = std::fs::read_to_string(dir.join("cells.csv")).unwrap();
    assert!(csv.starts_with("nlhomog-csv v1"));
    assert!(csv.lines().nth(1).unwrap().contains(",nu,"));
    let dumped = std::fs::read_to_string(dir.join("config.json")).unwrap();
    for section in ["law", "nonlinearity", "mesh", "solver", "experiment", "ensemble", "output"] {
        assert!(dumped.contains(&format!("\"{section}\"")), "{section} missing from dumped config");
    }
}

#[test]
fn constant_commute_check_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nlhomog(tmp.path(), &["commute", "--config", &config("const.json"), "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = run_dir(&out);
    let rep = nlhomog(tmp.path(), &["report", "--in", dir.to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&rep.stdout).unwrap();
    assert!(v["rate_fits"]["commute.csv"]["grad"].is_object());
    assert!(v["tail_fits"].is_object());
}

#[test]
fn unknown_keys_exit_with_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nlhomog(tmp.path(), &["sample", "--set", "bogus=1", "--set", "mesh.zz=2"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("mesh.zz"), "{err}");
    let missing = nlhomog(tmp.path(), &["report", "--in", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn failed_check_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nlhomog(
        tmp.path(),
        &["superlin", "--set", "experiment.min_slope=100", "--set", "ensemble.size=2", "--set", "experiment.n=1", "--check"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let out = nlhomog(
        tmp.path(),
        &["superlin", "--set", "experiment.min_slope=100", "--set", "ensemble.size=2", "--set", "experiment.n=1"],
    );
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn solver_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nlhomog(
        tmp.path(),
        &["superlin", "--set", "solver.max_newton=1", "--set", "ensemble.size=2", "--set", "experiment.n=1"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |w: &'static str| {
        vec!["sample", "--set", "experiment.n=2", "--workers", w]
    };
    let a = run_dir(&nlhomog(tmp.path(), &args("1")));
    let b = run_dir(&nlhomog(tmp.path(), &args("3")));
    assert_ne!(a, b);
    for f in ["cells.csv", "realization.json", "summary.json", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
