use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rca"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap()
}

fn reference_case(dir: &Path) -> String {
    let out = rca(&["generate", "--reference-case", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.json").to_str().unwrap().to_string()
}

#[test]
fn diagnose_reference_case() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = reference_case(dir.path());
    let ctx = dir.path().join("context.json");
    let out = rca(&[
        "diagnose",
        "--manifest",
        &manifest,
        "--case",
        "cartservice-2025-06-05",
        "--dump-context",
        ctx.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = json(&out.stdout);
    assert_eq!(d["component"], "cartservice");
    assert_eq!(d["reasoning_trace"].as_array().unwrap().len(), 4);
    let c = json(&std::fs::read(&ctx).unwrap());
    assert_eq!(c["strategy"], "final");
}

#[test]
fn diagnose_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = reference_case(dir.path());
    let args = [
        "diagnose",
        "--manifest",
        &manifest,
        "--case",
        "cartservice-2025-06-05",
        "--seed",
        "42",
    ];
    let a = rca(&args);
    let b = rca(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn explicit_paths_and_window() {
    let dir = tempfile::tempdir().unwrap();
    reference_case(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = rca(&[
        "diagnose",
        "--dir",
        d,
        "--start",
        "2025-06-05T18:10:05Z",
        "--end",
        "2025-06-05T18:34:05Z",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out.stdout)["component"], "cartservice");

    let trees = dir.path().join("trees.txt");
    let out = rca(&[
        "analyze",
        "--dir",
        d,
        "--start",
        "1749147005",
        "--end",
        "1749148445",
        "--dump-trees",
        trees.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out.stdout);
    assert!(!r["reports"]["trace"]["candidate_components"]
        .as_array()
        .unwrap()
        .is_empty());
    assert!(std::fs::read_to_string(&trees).unwrap().contains("cartservice"));
}

#[test]
fn empty_window_is_no_evidence() {
    let dir = tempfile::tempdir().unwrap();
    reference_case(dir.path());
    let out = rca(&[
        "diagnose",
        "--dir",
        dir.path().to_str().unwrap(),
        "--start",
        "2025-06-05T21:00:00Z",
        "--end",
        "2025-06-05T21:10:00Z",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(out.stdout.is_empty());
    assert_eq!(stderr_error(&out)["error"], "no_evidence");
}

#[test]
fn missing_file_is_ingest_error() {
    let out = rca(&[
        "diagnose",
        "--traces",
        "/nonexistent/traces.parquet",
        "--start",
        "2025-06-05T18:00:00Z",
        "--end",
        "2025-06-05T18:10:00Z",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["code"], 3);
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = rca(&[
            "generate",
            "--corpus",
            "2",
            "--seed",
            "42",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let entry = entry.unwrap();
        if entry.path().is_dir() {
            for f in std::fs::read_dir(entry.path()).unwrap() {
                files.push(f.unwrap().path().strip_prefix(a.path()).unwrap().to_path_buf());
            }
        }
    }
    assert_eq!(files.len(), 2 * 7);
    for f in files {
        assert_eq!(
            std::fs::read(a.path().join(&f)).unwrap(),
            std::fs::read(b.path().join(&f)).unwrap(),
            "{f:?}"
        );
    }
}

#[test]
fn invalid_target_is_invalid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let mut s: Value = serde_json::to_value(rca_core::fixtures::reference_case_scenario()).unwrap();
    for f in s["faults"].as_array_mut().unwrap() {
        f["target"]["name"] = "nosuchservice".into();
    }
    s["ground_truth"] = Value::Null;
    let spec = dir.path().join("bad.json");
    std::fs::write(&spec, s.to_string()).unwrap();
    let out = rca(&[
        "generate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(8), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_error(&out)["error"], "invalid_spec");
}

#[test]
fn corpus_spec_writes_every_case() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("corpus.toml");
    std::fs::write(&spec, "[corpus]\ncount = 100\nseed = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = rca(&[
        "generate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 100);
    let m = json(&std::fs::read(out_dir.join("manifest.json")).unwrap());
    assert_eq!(m["cases"].as_array().unwrap().len(), 100);
}

#[test]
fn eval_sweep_and_gate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert!(rca(&[
        "generate",
        "--corpus",
        "4",
        "--seed",
        "9",
        "--out",
        corpus.to_str().unwrap()
    ])
    .status
    .success());
    let manifest = corpus.join("manifest.json");
    let results = dir.path().join("results");
    let report = dir.path().join("report.txt");
    let out = rca(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--sweep",
        "--out",
        results.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in ["original", "early", "intermediate", "final"] {
        let r = json(&std::fs::read(results.join(format!("eval_{s}.json"))).unwrap());
        assert_eq!(r["cases"], 4);
    }
    assert!(std::fs::read_to_string(&report)
        .unwrap()
        .contains("question: A fault occurred"));

    let out = rca(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--strategy",
        "original",
        "--min-accuracy",
        "0.9",
    ]);
    assert_eq!(out.status.code(), Some(10));
    let r = json(&out.stdout);
    assert_eq!(r["strategy"], "original");
}

#[test]
fn config_file_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = reference_case(dir.path());
    let cfg = dir.path().join("rca.toml");
    std::fs::write(&cfg, "parallelism = 1\n[fusion]\nstrategy = \"early\"\n").unwrap();
    let ctx = dir.path().join("ctx.json");
    let out = rca(&[
        "--config",
        cfg.to_str().unwrap(),
        "diagnose",
        "--manifest",
        &manifest,
        "--case",
        "cartservice-2025-06-05",
        "--dump-context",
        ctx.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&std::fs::read(&ctx).unwrap())["strategy"], "early");

    std::fs::write(&cfg, "parallelism = 0\n").unwrap();
    let out = rca(&[
        "--config",
        cfg.to_str().unwrap(),
        "diagnose",
        "--manifest",
        &manifest,
        "--case",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(7));

    let out = rca(&[
        "--log-level",
        "loud",
        "diagnose",
        "--manifest",
        &manifest,
        "--case",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(7));

    let out = rca(&["diagnose", "--manifest", &manifest, "--case", "unknown"]);
    assert_eq!(out.status.code(), Some(9));
}

#[test]
fn help_is_stable() {
    let a = rca(&["--help"]);
    let b = rca(&["--help"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    for cmd in [
        "diagnose",
        "analyze",
        "generate",
        "eval",
        "--config",
        "--seed",
        "--log-level",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn dir_alone_uses_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    reference_case(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = rca(&["diagnose", "--dir", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out.stdout)["component"], "cartservice");

    let out = rca(&["diagnose", "--dir", d, "--case", "nope"]);
    assert_eq!(out.status.code(), Some(9));
    let empty = tempfile::tempdir().unwrap();
    let out = rca(&["diagnose", "--dir", empty.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["error"], "usage");
}

#[test]
fn closed_stdout_is_not_a_crash() {
    use std::process::Stdio;
    let dir = tempfile::tempdir().unwrap();
    reference_case(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_rca"))
        .args(["analyze", "--dir", dir.path().to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // drop the read end before the output is written
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
