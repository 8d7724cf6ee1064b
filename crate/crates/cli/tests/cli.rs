use std::path::Path;
use std::process::{Command, Output};

fn fracdrift(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracdrift"))
        .args(args)
        .env_remove("FRACDRIFT_OUT")
        .current_dir(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const MINIMAL: &str = r#"{
  "name": "minimal",
  "params": { "alpha": 1.5 },
  "drift": { "kind": "constant", "b": [0.3, 0.0] },
  "grid": { "horizon": 0.5, "m": 16 },
  "checks": [ { "id": "free_scaling" }, { "id": "free_gradient" }, { "id": "contraction" } ]
}"#;

fn manifest(dir: &Path) -> serde_json::Value {
    let p = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_str().unwrap().ends_with("_manifest.json"))
        .expect("manifest written");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn minimal_config_passes_and_reports_stably() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let run = fracdrift(&["run", &cfg, "--out", "out"], tmp.path());
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let out = tmp.path().join("out");
    let m = manifest(&out);
    assert_eq!(m["overall_pass"], true);
    let hash = m["config_hash"].as_str().unwrap();
    assert!(out.join(format!("{}_reports.csv", &hash[..12])).exists());
    let a = fracdrift(&["report", "out"], tmp.path());
    let b = fracdrift(&["report", "out"], tmp.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("check"));
    assert!(text.contains("summary withheld"));
}

#[test]
fn out_of_range_alpha_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &MINIMAL.replace("1.5", "2.5"));
    let run = fracdrift(&["run", &cfg, "--out", "out"], tmp.path());
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("params.alpha"));
    assert!(!tmp.path().join("out").exists());
    let cfg = write_config(tmp.path(), "d.json", &MINIMAL.replace("\"m\"", "\"cells\""));
    assert_eq!(fracdrift(&["run", &cfg], tmp.path()).status.code(), Some(2));
}

#[test]
fn failing_tolerance_gives_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let body = MINIMAL.replace(r#"{ "id": "free_gradient" }"#, r#"{ "id": "free_gradient", "tol": 1e-15 }"#);
    let cfg = write_config(tmp.path(), "c.json", &body);
    let run = fracdrift(&["run", &cfg, "--out", "out"], tmp.path());
    assert_eq!(run.status.code(), Some(1));
    assert_eq!(manifest(&tmp.path().join("out"))["overall_pass"], false);
    let rep = fracdrift(&["report", "out"], tmp.path());
    assert_eq!(rep.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("FAIL"));
}

#[test]
fn manifest_hash_does_not_depend_on_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    for (w, dir) in [("1", "a"), ("3", "b")] {
        let run = fracdrift(&["run", &cfg, "--workers", w, "--out", dir], tmp.path());
        assert_eq!(run.status.code(), Some(0));
    }
    let (a, b) = (manifest(&tmp.path().join("a")), manifest(&tmp.path().join("b")));
    assert_eq!(a["manifest_hash"], b["manifest_hash"]);
    assert_eq!(a["reports"], b["reports"]);
    assert_ne!(a["workers"], b["workers"]);
}

#[test]
fn report_without_manifest_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(fracdrift(&["report", "."], tmp.path()).status.code(), Some(2));
}
