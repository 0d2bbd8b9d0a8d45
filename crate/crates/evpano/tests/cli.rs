//! Black-box checks of the command-line binary: exit codes, the
//! machine-readable error line, and simulator-level behaviors that only
//! show up through the file interface.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evpano"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn count_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn config_errors_exit_2_with_machine_readable_line() {
    let out = run(&["solve", "--map-size", "500x260"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("error exit=2 kind=config"),
        "unexpected stderr: {}",
        stderr(&out)
    );
}

#[test]
fn missing_input_files_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = run(&[
        "solve",
        "--events",
        missing.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("kind=data"), "unexpected stderr: {}", stderr(&out));
}

#[test]
fn static_trajectory_produces_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("static.txt");
    fs::write(&traj, "0.0 0 0 0 1\n1.0 0 0 0 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--map-size",
        "128x64",
        "--trajectory",
        traj.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert_eq!(count_lines(&out_dir.join("events.txt")), 0);
}

#[test]
fn doubling_the_contrast_reduces_the_event_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for (c, name) in [("0.2", "lo"), ("0.4", "hi")] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "simulate",
            "--map-size",
            "128x64",
            "--duration",
            "1.0",
            "--contrast",
            c,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        counts.push(count_lines(&out_dir.join("events.txt")));
    }
    assert!(counts[0] > 100, "low-contrast run produced only {} events", counts[0]);
    assert!(
        counts[1] < counts[0],
        "expected fewer events at doubled contrast: {} vs {}",
        counts[1],
        counts[0]
    );
}

#[test]
fn repeated_simulation_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut streams = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "simulate",
            "--map-size",
            "128x64",
            "--duration",
            "1.0",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        streams.push(fs::read(out_dir.join("events.txt")).unwrap());
    }
    assert_eq!(streams[0], streams[1]);
}

#[test]
fn eval_of_the_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--map-size",
        "128x64",
        "--duration",
        "1.0",
        "--out-dir",
        sim_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let gt = sim_dir.join("gt_trajectory.txt");
    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--trajectory",
        gt.to_str().unwrap(),
        "--gt-trajectory",
        gt.to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let metrics = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let are: f64 = metrics
        .lines()
        .find_map(|l| l.strip_prefix("are_rmse_deg,").map(|v| v.trim().parse().unwrap()))
        .expect("metrics.csv should report are_rmse_deg");
    assert!(are < 1e-9, "self-comparison ARE {are}");
}
