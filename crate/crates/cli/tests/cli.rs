use std::fs;
use std::process::{Command, Output};

fn timewarp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timewarp")).args(args).output().unwrap()
}

const HEADER: &str =
    "protocol,workers,interference,seed,wall_clock_s,committed_events,rollbacks,gvt_rounds,spin_tries,efficiency";

#[test]
fn small_run_prints_csv() {
    let out = timewarp(&["--protocol", "fh", "--workers", "2", "--lps", "4", "--t-end", "3", "--reps", "2", "--gvt-interval-ms", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("fh,2,0,1,"));
    assert!(lines[2].starts_with("fh,2,0,2,"));
}

#[test]
fn audit_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("phold.toml");
    let csv = dir.path().join("out.csv");
    fs::write(
        &cfg,
        "num_lps = 6\ninitial_buffers_per_lp = 3\nt_end = 4.0\nseed = 9\n[buffer_size_range]\nmin = 16\nmax = 64\n",
    )
    .unwrap();
    let out = timewarp(&[
        "--workers",
        "3",
        "--audit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    assert!(lines.next().unwrap().starts_with("wf,3,0,9,"));
}

#[test]
fn serial_baseline_runs() {
    let out = timewarp(&["--protocol", "serial", "--lps", "4", "--t-end", "2"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("\nserial,1,0,1,"));
}

#[test]
fn bad_configuration_exits_with_2() {
    for args in [
        &["--workers", "0"][..],
        &["--protocol", "serial", "--audit"],
        &["--t-end", "-1"],
        &["--config", "/nonexistent/phold.toml"],
    ] {
        let out = timewarp(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "num_lps = 4\nbogus = 1\n").unwrap();
    assert_eq!(timewarp(&["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}
