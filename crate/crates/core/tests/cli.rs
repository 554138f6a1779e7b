use std::path::Path;
use std::process::{Command, Output};

fn gist(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gist"))
        .args(args)
        .current_dir(cwd)
        .env("GIST_CACHE_DIR", cwd.join("cache"))
        .output()
        .unwrap()
}

#[test]
fn synth_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = gist(&["synth", "--out", "toy"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = gist(&["run", "--config", "toy/gist.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("GIST") && text.contains("Frozen LP"), "{text}");

    let out = gist(&["run", "--config", "toy/gist.toml", "--format", "json"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["experiment_id"], "toy-0");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gist(&["synth", "--out", "toy"], dir.path()).status.success());
    let path = dir.path().join("toy/gist.toml");
    let text = std::fs::read_to_string(&path).unwrap().replace("n = 3", "n = 0");
    std::fs::write(&path, text).unwrap();
    let out = gist(&["run", "--config", "toy/gist.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gist(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = gist(&["data", "validate", "--manifest", "missing.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_kshot_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let out = gist(&["eval", "kshot", "--seeds", "0,1,2", "--accuracies", "70,80,90"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    // sample std of {70, 80, 90} is 10
    assert!(text.contains("80.00 (10.00)"), "{text}");
}
