//! Black-box tests of the command-line interface: exit codes, artifacts,
//! and error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn ndrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndrl"))
        .args(args)
        .output()
        .expect("failed to spawn ndrl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_prints_usage_and_exits_zero() {
    let out = ndrl(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["calibrate", "train", "baseline", "evaluate", "compare"] {
        assert!(text.contains(sub), "help text missing {sub}");
    }
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(code(&ndrl(&[])), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&ndrl(&["train", "--bogus"])), 2);
}

#[test]
fn train_without_config_is_a_usage_error() {
    assert_eq!(code(&ndrl(&["train"])), 2);
}

#[test]
fn nonexistent_config_is_a_runtime_error() {
    let out = ndrl(&["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("/nonexistent/run.cfg"), "error should name the file");
}

#[test]
fn config_with_unknown_key_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "episodes = 10\nwombats = 4\n").unwrap();
    let out = ndrl(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("wombats") && err.contains('2'), "got: {err}");
}

#[test]
fn compare_with_missing_run_directory_names_the_path() {
    let out = ndrl(&["compare", "--run", "/no/such/run", "--baseline-run", "/no/such/base"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("/no/such/run"));
}

#[test]
fn train_writes_run_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "episodes = 150\nseed = 3\n").unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = ndrl(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        for f in ["training_log.csv", "run_meta.json", "child_net.txt"] {
            assert!(out_dir.join(f).exists(), "missing {f}");
        }
    }
    let read = |p: &Path, f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(
        read(&out_a, "training_log.csv"),
        read(&out_b, "training_log.csv"),
        "training logs differ between identical runs"
    );
}

#[test]
fn evaluate_reports_metrics_for_a_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let schedule = dir.path().join("schedule.csv");
    let days = [110, 160, 170, 180, 190, 195, 202, 209, 216, 223, 230, 237];
    let mut csv = String::from("date,irrigation_mm,nitrogen_kgha\n");
    for d in days {
        csv.push_str(&format!("23{d:03},44.75,20.83\n"));
    }
    std::fs::write(&schedule, csv).unwrap();
    let out_dir = dir.path().join("eval");
    let out = ndrl(&[
        "evaluate",
        "--schedule",
        schedule.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.json")).unwrap();
    assert!(metrics.contains("iwp") && metrics.contains("npfp"), "got: {metrics}");
}

#[test]
fn calibrate_writes_params_and_fit_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cal");
    let out = ndrl(&["calibrate", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for f in ["params.cfg", "fit.csv", "fit_metrics.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let report = std::fs::read_to_string(out_dir.join("fit_metrics.json")).unwrap();
    assert!(report.contains("nrmse_pct"));
}
