use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ruled(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ruled")).args(args).output().expect("spawn ruled")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn decreasing_ks_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"example": "product_p1", "ks": [40, 20]}"#);
    let out = ruled(&["verify-expansion", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_example_and_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", r#"{"example": "no_such_example"}"#);
    let b = write_config(dir.path(), "b.json", r#"{"example": "product_p1", "colour": 1}"#);
    for cfg in [a, b] {
        assert_eq!(ruled(&["he-solve", &cfg]).status.code(), Some(2));
    }
    assert_eq!(ruled(&["he-solve", "/nonexistent/config.json"]).status.code(), Some(2));
}

#[test]
fn product_expansion_is_saturated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.json", r#"{"example": "product_p1", "points": 4}"#);
    let o = dir.path().join("o");
    let out = ruled(&["verify-expansion", &cfg, "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(o.join("verify-expansion_scal.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("example_id,point_id,k,exact,series,residual,slope"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.ends_with(",saturated")));
    assert!(o.join("verify-expansion.json").exists());
}

#[test]
fn runs_are_deterministic_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.json", r#"{"example": "hirzebruch1", "points": 3}"#);
    let mut bodies = Vec::new();
    for run in ["a", "b"] {
        let o = dir.path().join(run);
        let out = ruled(&["verify-expansion", &cfg, "--out", o.to_str().unwrap(), "--seed", "7"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        bodies.push(fs::read_to_string(o.join("verify-expansion_scal.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);

    let o = dir.path().join("a");
    let out = ruled(&["report", &cfg, "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("verify-expansion hirzebruch1 scal_order pass"));
}
