//! End-to-end checks of the `rfidsim` binary: exit codes, file outputs,
//! and the shape of what lands on stdout.

use std::path::PathBuf;
use std::process::{Command, Output};

/// A ten-second scenario with a single slow vehicle, small enough that
/// every invocation here finishes in well under a second.
const TINY_SCENARIO: &str = "\
duration_s = 10.0
warmup_s = 0.0
[traffic]
speed_range_mps = [10.0, 10.0]
headway_range_s = [100.0, 100.0]
lanes = 1
";

/// Unique scratch path for one test, under the system temp dir.
fn scratch(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("rfidsim-cli-test-{}-{}", std::process::id(), name));
    p
}

fn write_tiny_scenario(name: &str) -> PathBuf {
    let path = scratch(name);
    std::fs::write(&path, TINY_SCENARIO).expect("write scenario");
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfidsim"))
        .args(args)
        .output()
        .expect("spawn rfidsim")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn a_plain_run_prints_a_summary_and_exits_zero() {
    let config = write_tiny_scenario("plain.toml");
    let out = run(&["simulate", config.to_str().unwrap()]);
    let text = stdout_of(&out);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(text.contains("tags: 1 spawned"), "summary census line missing:\n{text}");
    assert!(text.contains("read ratio"), "read ratio line missing:\n{text}");
    assert!(text.contains("aes128-cbc-check32"), "cipher suite line missing:\n{text}");
    std::fs::remove_file(config).ok();
}

#[test]
fn missing_and_malformed_configs_exit_one() {
    let out = run(&["simulate", "/nonexistent/path.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("error"));

    let config = scratch("badkey.toml");
    std::fs::write(&config, "nonsense_key = 1\n").unwrap();
    let out = run(&["simulate", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("nonsense_key"));
    std::fs::remove_file(config).ok();
}

#[test]
fn sweeps_write_one_csv_row_per_grid_point() {
    let config = write_tiny_scenario("sweep.toml");
    let csv = scratch("sweep.csv");
    let out = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--sweep",
        "delay=0,5",
        "--sweep",
        "seed=1,2",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let text = std::fs::read_to_string(&csv).expect("csv written");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 4, "header plus one row per (delay × seed)");
    let columns = lines[0].split(',').count();
    for row in &lines[1..] {
        assert_eq!(row.split(',').count(), columns, "ragged row: {row}");
    }
    std::fs::remove_file(config).ok();
    std::fs::remove_file(csv).ok();
}

#[test]
fn traces_are_parseable_jsonl() {
    let config = write_tiny_scenario("trace.toml");
    let trace = scratch("trace.jsonl");
    let out = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let text = std::fs::read_to_string(&trace).expect("trace written");
    let mut events = 0usize;
    for line in text.lines() {
        let value: serde_json::Value = serde_json::from_str(line).expect("JSONL line");
        assert!(value.get("t_ns").is_some(), "event missing timestamp: {line}");
        events += 1;
    }
    assert!(events > 0, "trace is empty");
    std::fs::remove_file(config).ok();
    std::fs::remove_file(trace).ok();
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    // --trace only makes sense for a single run, so combining it with a
    // sweep is rejected at argument-parsing time.
    let config = write_tiny_scenario("conflict.toml");
    let out = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--sweep",
        "delay=0,5",
        "--trace",
        "/tmp/never-written.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--sweep",
        "wat=1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("unknown sweep axis"));

    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    std::fs::remove_file(config).ok();
}
