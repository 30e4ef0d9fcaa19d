use std::fs;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cteach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cteach")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_config_keys() {
    let o = cteach(&["teach", "--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["lambda_theta", "fractions", "report_runtime", "block_solver"] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn generate_then_teach_from_files() {
    let dir = TempDir::new().unwrap();
    let out = format!("out={}", dir.path().display());
    let data = dir.path().join("data.csv");
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "n=300\nd=3\nteachers=3\nrounds=15\nreport_runtime=false\n").unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let o = cteach(&["generate", "-c", cfg_s, "--set", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 301);

    let o = cteach(&["make-target", "-c", cfg_s, "-s", &out, "-s", &format!("data={}", data.display())]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = cteach(&[
        "teach",
        "-c",
        cfg_s,
        "-s",
        &out,
        "-s",
        &format!("data={}", data.display()),
        "-s",
        &format!("target={}", dir.path().join("target.txt").display()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("teach.csv")).unwrap();
    assert!(csv.starts_with("method,N,K,budget_fraction"));
    assert!(csv.contains("collaborative,300,3,0.05,"));
}

#[test]
fn validation_errors_exit_one_and_name_the_key() {
    let o = cteach(&["teach", "-s", "rounds=lots"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`rounds`"), "{}", stderr(&o));

    let o = cteach(&["teach", "-s", "colour=blue"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));

    let o = cteach(&["baseline", "greedy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("greedy"));

    let o = cteach(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_csv_names_the_stage() {
    let dir = TempDir::new().unwrap();
    let o = cteach(&[
        "teach",
        "-s",
        &format!("out={}", dir.path().display()),
        "-s",
        "data=/nonexistent/file.csv",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data:"), "{}", stderr(&o));
}

#[test]
fn numeric_failure_exits_two() {
    // an unbounded regression target makes the first block solve blow up
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("t.txt");
    fs::write(&target, "theta_star=1e300,1e300\n").unwrap();
    let o = cteach(&[
        "teach",
        "-s",
        &format!("out={}", dir.path().display()),
        "-s",
        &format!("target={}", target.display()),
        "-s",
        "task=regression",
        "-s",
        "n=50",
        "-s",
        "d=2",
        "-s",
        "teachers=1",
        "-s",
        "clusters=2",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn check_reports_json_and_passes() {
    let dir = TempDir::new().unwrap();
    let o = cteach(&["check", "gradient", "-s", &format!("out={}", dir.path().display())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradient: pass"));
    assert!(dir.path().join("check_gradient.json").exists());
}
