use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bandlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bandlab"));
    c.args(args).env_remove("BANDLAB_THREADS");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn small_ward(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("ward.json");
    std::fs::write(&p, format!(r#"{{"samples": 3, "sizes": [{{"d": 3, "w": 2, "l": 2}}]{extra}}}"#)).unwrap();
    p
}

#[test]
fn ward_check_small_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_ward(dir.path(), "");
    let out = dir.path().join("out");
    let o = bandlab(&["ward-check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS resolvent_ward_N64"));
    let j = read_json(&out.join("ward-check.json"));
    assert_eq!(j["pass"], true);
    assert_eq!(j["config"]["samples"], 3);
}

#[test]
fn kloop_n4_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bandlab(&["kloop", "--n", "4", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&dir.path().join("kloop.json"));
    assert_eq!(j["config"]["sigma"], "+-+-");
}

#[test]
fn malformed_config_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"samples\": 3,\n  \"seed\": \n}").unwrap();
    let out = dir.path().join("out");
    let o = bandlab(&["sample", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json:4"));
    let j = read_json(&out.join("sample.json"));
    assert_eq!(j["pass"], false);
    assert_eq!(j["error"]["kind"], "config");
}

#[test]
fn unknown_field_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"geo": {"d": 3, "w": 2, "l": 2, "width": 4}}"#).unwrap();
    let out = dir.path().join("out");
    let o = bandlab(&["diffusion", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let j = read_json(&out.join("diffusion.json"));
    assert!(j["error"]["path"].as_str().unwrap().starts_with("geo"), "{j}");
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bandlab(&["decay", "--samples", "0", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let j = read_json(&dir.path().join("decay.json"));
    assert_eq!(j["error"]["path"], "samples");
}

#[test]
fn unknown_flag_exits_2() {
    let o = bandlab(&["ward-check", "--frobnicate"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_criterion_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_ward(dir.path(), r#", "tolerances": {"ward": 0.0}"#);
    let out = dir.path().join("out");
    let o = bandlab(&["ward-check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAILED: resolvent_ward_N64"));
    let j = read_json(&out.join("ward-check.json"));
    assert_eq!(j["pass"], false);
}

#[test]
fn thread_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_ward(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = bandlab(&["ward-check", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()], &[("BANDLAB_THREADS", "1")]);
    let ob = bandlab(&["ward-check", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "3"], &[]);
    assert!(oa.status.success() && ob.status.success());
    let mut ja = read_json(&a.join("ward-check.json"));
    let mut jb = read_json(&b.join("ward-check.json"));
    assert_eq!(ja["metadata"]["threads"], 1);
    assert_eq!(jb["metadata"]["threads"], 3);
    for j in [&mut ja, &mut jb] {
        j.as_object_mut().unwrap().remove("metadata");
        j["config"].as_object_mut().unwrap().remove("out");
    }
    assert_eq!(ja, jb);
}
