//! End-to-end checks on the binary: exit codes, error JSON, manifests, determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::Value;
use sha2::{Digest, Sha256};

static COUNTER: AtomicUsize = AtomicUsize::new(0);

fn scratch(tag: &str) -> PathBuf {
    let n = COUNTER.fetch_add(1, Ordering::SeqCst);
    let dir = std::env::temp_dir().join(format!("mfglab-it-{}-{tag}-{n}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn mfglab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfglab"))
        .args(args)
        .env("MFGLAB_OUTPUT_ROOT", root)
        .current_dir(root)
        .output()
        .expect("spawn mfglab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {}", String::from_utf8_lossy(&o.stderr)))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn selfsim_writes_csv_and_consistent_manifest() {
    let root = scratch("selfsim");
    let out = root.join("run");
    let o = mfglab(&root, &["selfsim", "--nx", "41", "--nt", "11", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["status"], "ok");

    let csv = fs::read_to_string(out.join("selfsim.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x,t,m,u,ux,S,Delta");
    assert_eq!(csv.lines().count(), 1 + 41 * 11);

    let m = manifest(&out);
    assert_eq!(m["tool"], "mfglab");
    assert_eq!(m["pipeline"], "selfsim");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex(&bytes));
        let lines = String::from_utf8(bytes).unwrap().lines().count() as u64;
        let rows = a["rows"].as_u64().unwrap();
        match a["format"].as_str().unwrap() {
            "csv" => assert_eq!(rows + 1, lines),
            _ => assert_eq!(rows, lines),
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let root = scratch("determinism");
    let (a, b) = (root.join("a"), root.join("b"));
    for dir in [&a, &b] {
        let o = mfglab(&root, &["run", "variational-selfsim", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    for art in ma["artifacts"].as_array().unwrap() {
        let f = art["file"].as_str().unwrap();
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mw = fs::read_to_string(a.join("mw.csv")).unwrap();
    assert_eq!(mw.lines().next().unwrap(), "field,x,t,value");
}

#[test]
fn negative_theta_is_a_field_level_validation_error() {
    let root = scratch("theta");
    let cfg = root.join("bad.toml");
    fs::write(&cfg, "[problem]\npipeline = \"selfsim\"\ncoupling = \"power:-1\"\n").unwrap();
    let o = mfglab(&root, &["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let e = stderr_json(&o);
    assert_eq!(e["field"], "problem.coupling");
    assert_eq!(e["exit_code"], 2);
    assert_eq!(e["error"], "validation");
}

#[test]
fn unknown_keys_and_bad_usage_exit_two() {
    let root = scratch("unknown");
    let cfg = root.join("typo.toml");
    fs::write(&cfg, "[problem]\npipeline = \"selfsim\"\nthetta = 2\n").unwrap();
    let o = mfglab(&root, &["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_json(&o)["field"], "thetta");

    let o = mfglab(&root, &["selfsim", "--nx", "many"]);
    assert_eq!(code(&o), 2);
    let o = mfglab(&root, &["run", "no-such-preset"]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_json(&o)["field"], "target");
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let root = scratch("missing");
    let o = mfglab(&root, &["diagnose", "--input", root.join("absent.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_json(&o)["field"], "problem.input");
}

#[test]
fn unwritable_output_is_an_io_error() {
    let root = scratch("io");
    let blocker = root.join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = mfglab(&root, &["selfsim", "--nx", "5", "--nt", "3", "--out", blocker.join("run").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert_eq!(stderr_json(&o)["error"], "io");
}

fn write_fields(path: &Path, spike: f64) {
    let mut s = String::from("x,t,m\n");
    for j in 0..9 {
        for i in 0..9 {
            let (x, t) = (i as f64 / 8.0, j as f64 / 8.0);
            let mut m = 1.0 + 0.2 * (x - 0.5) * (x - 0.5);
            if i == 4 && j == 4 {
                m += spike;
            }
            s.push_str(&format!("{x},{t},{m}\n"));
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn diagnose_exit_codes_follow_the_checks() {
    let root = scratch("diagnose");
    let good = root.join("good.csv");
    write_fields(&good, 0.0);
    let o = mfglab(&root, &["diagnose", "--input", good.to_str().unwrap(), "--checks", "extremum,rectangles", "--topology", "neumann", "--out", root.join("ok").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let bad = root.join("spike.csv");
    write_fields(&bad, 5.0);
    let dir = root.join("fail");
    let o = mfglab(&root, &["diagnose", "--input", bad.to_str().unwrap(), "--checks", "extremum", "--topology", "neumann", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    assert_eq!(stderr_json(&o)["error"], "diagnostic");
    assert_eq!(manifest(&dir)["status"], "checks-failed");
    let d: Value = serde_json::from_slice(&fs::read(dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["checks"]["extremum"]["pass"], false);
}

#[test]
fn time_reversed_flow_runs() {
    let root = scratch("reverse");
    let dir = root.join("rev");
    let o = mfglab(&root, &["solve-flow", "--nx", "33", "--time-reverse", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&dir);
    assert!(m["residuals"]["mass"].as_f64().unwrap() < 1e-10);
    for f in ["gamma.csv", "boundary.csv", "fields.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_reports_the_worst_child_exit_code() {
    let root = scratch("sweep");
    let bad = root.join("bad.toml");
    fs::write(&bad, "[problem]\npipeline = \"selfsim\"\ncoupling = \"power:-1\"\n").unwrap();
    let out = root.join("summary");
    let o = mfglab(&root, &["sweep", "selfsim-theta2", bad.to_str().unwrap(), "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(root.join("selfsim-theta2").join("selfsim.csv").exists());
}

#[test]
fn presets_listing_and_version() {
    let root = scratch("presets");
    let o = mfglab(&root, &["presets"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("elliptic-log-compact"));
    let o = mfglab(&root, &["--version"]);
    assert_eq!(code(&o), 0);
}
