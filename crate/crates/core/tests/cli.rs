use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmpih::config::Config;

fn mmpih(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmpih")).args(args).output().expect("binary runs")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn run_twice_gives_identical_summaries() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = mmpih(&["run", "--seed", "1", "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let sa = read(&a.path().join("episode_0.summary"));
    assert_eq!(sa, read(&b.path().join("episode_0.summary")));
    assert_eq!(read(&a.path().join("episode_0.trace")), read(&b.path().join("episode_0.trace")));
    let v: serde_json::Value = serde_json::from_str(sa.lines().next().unwrap()).unwrap();
    assert_eq!(v["kind"], "episode");
    assert_eq!(v["seed"], 1);
}

#[test]
fn missing_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = mmpih(&["run", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[run]\nepisodes = \"many\"\n").unwrap();
    let out = mmpih(&["batch", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.episodes"));
}

#[test]
fn report_reaggregates_a_batch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = mmpih(&["batch", "--episodes", "3", "--seed", "5", "--out", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = read(&dir.path().join("batch.report"));
    fs::remove_file(dir.path().join("batch.report")).unwrap();
    let out = mmpih(&["report", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second = read(&dir.path().join("batch.report"));
    let head = |s: &str| serde_json::from_str::<serde_json::Value>(s.lines().next().unwrap()).unwrap();
    assert_eq!(head(&first), head(&second));
    assert_eq!(head(&first)["episodes"], 3);
}

#[test]
fn printed_config_parses_back_to_defaults() {
    let out = mmpih(&["print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(Config::from_toml_str(&text).unwrap(), Config::default());
}
