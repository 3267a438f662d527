//! End-to-end tests of the `lrsift` binary: exit codes, file outputs and
//! the query contract, driven through the real executable.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lrsift::{formats, io};
use lrsift_core::synth;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lrsift"));
    c.env("LRSIFT_THREADS", "2");
    c
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Config that skips rectification and rank computation: keeps the binary
/// tests fast while exercising the full IO path.
fn fast_config(dir: &Path) -> PathBuf {
    let p = dir.join("fast.json");
    std::fs::write(&p, r#"{"rectify": false, "compute_rank": false}"#).unwrap();
    p
}

fn write_facade(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let p = dir.join(name);
    io::save_pgm(&p, &synth::facade(120, 120, seed)).unwrap();
    p
}

#[test]
fn print_config_is_valid_json() {
    let out = bin().arg("print-config").output().unwrap();
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tree_branch"], 8);
    assert_eq!(v["rank_min"], 2);
    assert_eq!(v["rank_max"], 5);
}

#[test]
fn extract_missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["extract", "--image", "/nonexistent/x.pgm", "--output"])
        .arg(dir.path().join("out.lrsf"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error"));
}

#[test]
fn extract_bad_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_facade(dir.path(), "a.pgm", 1);
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"rank_min": 9, "rank_max": 1}"#).unwrap();
    let out = bin()
        .arg("extract")
        .arg("--image")
        .arg(&img)
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(dir.path().join("out.lrsf"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}

#[test]
fn extract_writes_readable_feature_set() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_facade(dir.path(), "a.pgm", 2);
    let cfg = fast_config(dir.path());
    let fs_path = dir.path().join("a.lrsf");
    let json_path = dir.path().join("a.json");
    let out = bin()
        .arg("extract")
        .arg("--image")
        .arg(&img)
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(&fs_path)
        .arg("--json")
        .arg(&json_path)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let fs = formats::read_feature_set(&fs_path).unwrap();
    assert_eq!(fs.image_id, "a");
    assert!(!fs.features.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(v["features"].as_array().unwrap().len(), fs.features.len());
}

fn build_manifest(dir: &Path, rows: &[(&str, f64, f64)]) -> PathBuf {
    let p = dir.join("manifest.csv");
    let mut text = String::from("path,latitude,longitude\n");
    for (path, lat, lon) in rows {
        text.push_str(&format!("{path},{lat},{lon}\n"));
    }
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn build_db_then_query_returns_self_first() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["a.pgm", "b.pgm", "c.pgm"].iter().enumerate() {
        write_facade(dir.path(), name, 10 + i as u64);
    }
    let manifest = build_manifest(
        dir.path(),
        &[
            ("a.pgm", 40.0, -70.0),
            ("b.pgm", 41.0, -70.0),
            ("c.pgm", 42.0, -70.0),
        ],
    );
    let cfg = fast_config(dir.path());
    let index = dir.path().join("db.lrvt");
    let out = bin()
        .arg("build-db")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--config")
        .arg(&cfg)
        .arg("--index")
        .arg(&index)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(index.exists());
    assert!(dir.path().join("db.report.json").exists());

    let out = bin()
        .arg("query")
        .arg("--index")
        .arg(&index)
        .arg("--image")
        .arg(dir.path().join("b.pgm"))
        .arg("--config")
        .arg(&cfg)
        .args(["--top-n", "10"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3, "top-n larger than index returns all");
    assert_eq!(lines[0]["image_id"], "b.pgm");
    assert_eq!(lines[0]["latitude"], 41.0);
}

#[test]
fn build_db_skips_missing_image_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    write_facade(dir.path(), "a.pgm", 20);
    write_facade(dir.path(), "b.pgm", 21);
    let manifest = build_manifest(
        dir.path(),
        &[
            ("a.pgm", 40.0, -70.0),
            ("gone.pgm", 41.0, -70.0),
            ("b.pgm", 42.0, -70.0),
        ],
    );
    let cfg = fast_config(dir.path());
    let index = dir.path().join("db.lrvt");
    let report = dir.path().join("report.json");
    let out = bin()
        .arg("build-db")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--config")
        .arg(&cfg)
        .arg("--index")
        .arg(&index)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("gone.pgm"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["indexed_images"], 2);
    let skipped: Vec<_> = v["images"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["skipped"] == true)
        .collect();
    assert_eq!(skipped.len(), 1);
}

#[test]
fn build_db_empty_manifest_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_manifest(dir.path(), &[]);
    let out = bin()
        .arg("build-db")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--index")
        .arg(dir.path().join("db.lrvt"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}

#[test]
fn build_db_bad_latitude_exits_3_and_names_entry() {
    let dir = tempfile::tempdir().unwrap();
    write_facade(dir.path(), "a.pgm", 30);
    write_facade(dir.path(), "b.pgm", 31);
    let manifest = build_manifest(
        dir.path(),
        &[("a.pgm", 95.0, -70.0), ("b.pgm", 42.0, -70.0)],
    );
    let out = bin()
        .arg("build-db")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--index")
        .arg(dir.path().join("db.lrvt"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("a.pgm"), "stderr: {}", stderr(&out));
}

#[test]
fn query_with_featureless_image_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    write_facade(dir.path(), "a.pgm", 40);
    write_facade(dir.path(), "b.pgm", 41);
    let manifest = build_manifest(
        dir.path(),
        &[("a.pgm", 40.0, -70.0), ("b.pgm", 41.0, -70.0)],
    );
    let cfg = fast_config(dir.path());
    let index = dir.path().join("db.lrvt");
    let out = bin()
        .arg("build-db")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--config")
        .arg(&cfg)
        .arg("--index")
        .arg(&index)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    // a uniform image yields no Harris corners and therefore no features
    let blank = dir.path().join("blank.pgm");
    io::save_pgm(&blank, &lrsift_core::Image::from_fn(120, 120, |_, _| 0.5)).unwrap();
    let out = bin()
        .arg("query")
        .arg("--index")
        .arg(&index)
        .arg("--image")
        .arg(&blank)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&out), 6);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "[]");
}

#[test]
fn bench_unknown_experiment_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["bench", "--experiment", "nonsense", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 5);
}

#[test]
fn bench_retrieval_without_index_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["bench", "--experiment", "retrieval", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}
