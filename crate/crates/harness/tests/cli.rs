use std::fs;
use std::path::Path;
use std::process::Command;

use camcim_harness::config::ExperimentConfig;
use camcim_harness::experiments::run_sweep;

const SMALL: &str = r#"
[array]
d = 16

[cache]
h_heavy = 24
m_reserved = 4

[equivalence]
input_len = 48
steps = 10
seeds = "0..3"

[sweep]
input_len = [32, 64]
output_len = [8, 16]
seeds = "0..2"

[compare]
input_len = 64
output_len = 8

[variation]
seeds = "0..10"

[trace_log]
input_len = 48
steps = 5
"#;

fn camcim(dir: &Path, args: &[&str]) -> std::process::Output {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    Command::new(env!("CARGO_BIN_EXE_camcim"))
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn sweep_csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let out = camcim(dir.path(), &["sweep", "--out", p.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let (a, b) = (fs::read(a).unwrap(), fs::read(b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 4);
    assert!(text.starts_with("input_len,output_len,pruning_ratio,condition,"));
}

#[test]
fn single_grid_point_gives_one_row() {
    let text = format!("{SMALL}\n").replace(
        "input_len = [32, 64]\noutput_len = [8, 16]",
        "input_len = [64]\noutput_len = [8]\nconditions = [\"static_dynamic\"]",
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let out = run_sweep(&cfg, &[0]).unwrap();
    let csv = camcim_harness::output::csv_string(&out.rows).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(out.rows[0].energy_improvement > 1.0);
}

#[test]
fn equivalence_exits_zero_and_reports_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = camcim(dir.path(), &["equivalence", "--seeds", "4,5"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("4,10,10,10,,"));
}

#[test]
fn trace_emits_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = camcim(dir.path(), &["trace", "-v"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 5);
    for line in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["matches"], true);
    }
}

#[test]
fn variation_and_compare_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = camcim(dir.path(), &["variation"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("0.0,10,1.0,1.0,1.0,"));
    let out = camcim(dir.path(), &["compare"]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().lines().count(),
        1 + 2 * 2 * 3
    );
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[cache]\npruning_ratio = 1.5\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_camcim"))
        .arg("--config")
        .arg(&cfg)
        .arg("compare")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = camcim(dir.path(), &["compare", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
