use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ma-tts"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ma-tts-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

const TINY: &str = "iterations = 2\nrealizations = 2\nevaluation_samples = 3\nshort_term_iterations = 3\n";

#[test]
fn check_passes() {
    let out = bin().args(["check", "--preset", "desk", "--seed", "3"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn run_writes_identical_outputs_for_one_seed() {
    let dir = scratch("run");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.join(name);
        let out = bin()
            .args(["run", "--preset", "desk", "--seed", "5", "--scheme", "proposed-gmm,scsit-upa"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(out_dir.join("metrics.csv")).unwrap(), std::fs::read(out_dir.join("manifest.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("proposed-gmm,none,0"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn sweep_flag_adds_rows() {
    let dir = scratch("sweep");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = bin()
        .args(["run", "--preset", "desk", "--scheme", "scsit-upa", "--sweep", "power_dbm=10,20"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("o"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("o/metrics.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(values, ["10.0", "20.0"]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn trace_writes_both_tables() {
    let dir = scratch("trace");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = bin()
        .args(["trace", "--preset", "desk", "--scheme", "proposed-gmm"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("o"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let short = std::fs::read_to_string(dir.join("o/short_term_trace.csv")).unwrap();
    assert_eq!(short.lines().count(), 1 + 4);
    let long = std::fs::read_to_string(dir.join("o/long_term_trace.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 2);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn bad_input_exits_with_two() {
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "n_users = 0\n").unwrap();
    let out = bin().args(["run", "--preset", "desk"]).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_users"));

    let missing = bin().args(["run", "--config", "/nonexistent/cfg.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    // Output path below a regular file cannot be created.
    let blocked = dir.join("file");
    std::fs::write(&blocked, b"x").unwrap();
    let out = bin().args(["run", "--preset", "desk"]).arg("--out").arg(blocked.join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let unknown = bin().args(["run", "--scheme", "nope"]).output().unwrap();
    assert!(!unknown.status.success());
    std::fs::remove_dir_all(dir).unwrap();
}
