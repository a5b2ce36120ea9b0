use std::path::Path;
use std::process::{Command, Output};

fn firesite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_firesite")).args(args).output().unwrap()
}

fn dir_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_then_plan_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir_arg(dir.path());
    let out = firesite(&["synth", "--out-dir", d, "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = firesite(&["plan", "--out-dir", d, "--seed", "2", "--set", "episodes=50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1 candidates"), "{stdout}");
    for f in ["sqi.csv", "candidates.csv", "cover_exact.json", "cover_greedy.json", "comparison.csv", "histogram.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("campaign_summary.json")).unwrap();
    assert!(summary.contains("\"episodes\": 50"));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    let out_dir = dir.path().join("out");
    std::fs::write(&cfg, format!("out_dir = {}\nseed = 9\n", out_dir.display())).unwrap();
    let out = firesite(&["synth", "--config", dir_arg(&cfg)]);
    assert!(out.status.success());
    let first = std::fs::read(out_dir.join("properties.csv")).unwrap();
    let out = firesite(&["synth", "--config", dir_arg(&cfg), "--seed", "10"]);
    assert!(out.status.success());
    assert_ne!(first, std::fs::read(out_dir.join("properties.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir_arg(dir.path());
    assert_eq!(firesite(&["plan", "--out-dir", d, "-p", "0"]).status.code(), Some(2));
    assert_eq!(firesite(&["score", "--out-dir", d]).status.code(), Some(2));
    assert_eq!(firesite(&["synth", "--out-dir", d, "--set", "nonsense=1"]).status.code(), Some(2));
    assert!(firesite(&["synth", "--out-dir", d]).status.success());
    std::fs::write(dir.path().join("properties.csv"), "property_id\n1\n").unwrap();
    let out = firesite(&["score", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage score failed"));
}
