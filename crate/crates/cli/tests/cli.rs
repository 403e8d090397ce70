use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn partmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partmc"))
        .args(args)
        .env_remove("PARTITION_MCMC_WORKERS")
        .output()
        .expect("spawn partmc")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn quick_run(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--target", "mix2d", "--samples-per-chain", "2000", "-o", p(dir)];
    args.extend_from_slice(extra);
    partmc(&args)
}

fn diagnose_json(args: &[&str]) -> (Output, Value) {
    let mut full = vec!["diagnose"];
    full.extend_from_slice(args);
    let out = partmc(&full);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = serde_json::from_slice(&out.stdout).expect("diagnose prints json");
    (out, v)
}

#[test]
fn run_writes_three_artifacts() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    let out = quick_run(&dir, &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["samples.csv", "manifest.json", "tree.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["target_name"], "mix2d");
}

#[test]
fn missing_target_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = partmc(&["run", "-o", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("target"), "{}", stderr(&out));
}

#[test]
fn same_seed_same_bytes() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = quick_run(d, &["--max-subspaces", "30", "--seed", "7"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let read = |d: &Path| std::fs::read(d.join("samples.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn worker_count_does_not_change_output() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(quick_run(&a, &["--workers", "1"]).status.success());
    assert!(quick_run(&b, &["--workers", "4"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("samples.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn malformed_config_reports_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("plan.json");
    std::fs::write(&cfg, "{\n  \"target\": \"mix2d\",\n  \"seed\": oops\n}\n").unwrap();
    let out = partmc(&["run", p(&cfg), "-o", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn unknown_config_field_is_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("plan.json");
    std::fs::write(&cfg, r#"{"target": "mix2d", "sed": 3}"#).unwrap();
    let out = partmc(&["run", p(&cfg), "-o", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sed"), "{}", stderr(&out));
}

#[test]
fn unknown_target_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = partmc(&["run", "--target", "nope", "-o", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_failure_exits_one_and_keeps_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("f");
    let out = partmc(&[
        "run",
        "--target",
        "mix2d",
        "--samples-per-chain",
        "5",
        "--chains-per-subspace",
        "2",
        "-o",
        p(&dir),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(dir.join("manifest.json").is_file());
    assert!(!dir.join("samples.csv").exists());
}

#[test]
fn diagnose_against_oracle() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    assert!(quick_run(&dir, &[]).status.success());
    let csv = tmp.path().join("d.csv");
    let (_, v) = diagnose_json(&[p(&dir), "--oracle-samples", "20000", "--csv", p(&csv)]);
    assert_eq!(v["ks"]["reference"], "oracle");
    let results = v["ks"]["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for r in results {
        let pv = r["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&pv));
        assert!(r["statistic"].as_f64().unwrap() < 0.2);
    }
    assert_eq!(v["stitched_n_eff"].as_array().unwrap().len(), 2);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn diagnose_split_halves() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    assert!(quick_run(&dir, &[]).status.success());
    let (_, v) = diagnose_json(&[p(&dir), "--reference", "split-halves"]);
    for r in v["ks"]["results"].as_array().unwrap() {
        let d = r["statistic"].as_f64().unwrap();
        let pv = r["p_value"].as_f64().unwrap();
        assert!(d > 0.0 && d < 1.0, "degenerate statistic {d}");
        assert!(pv > 0.0 && pv <= 1.0);
        assert!(r["n_effective"].as_f64().unwrap() > 1.0);
    }
}

#[test]
fn diagnose_rates_and_missing_timing() {
    let tmp = TempDir::new().unwrap();
    let (run, base) = (tmp.path().join("r"), tmp.path().join("b"));
    assert!(quick_run(&run, &[]).status.success());
    assert!(quick_run(&base, &["--max-subspaces", "1"]).status.success());

    let (_, v) = diagnose_json(&[p(&run), "--baseline", p(&base)]);
    assert!(v["rates"]["sampling_rate"].as_f64().unwrap() > 0.0);
    assert_eq!(v["rates"]["baseline"]["n_subspaces"], 1);

    let manifest = run.join("manifest.json");
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m.as_object_mut().unwrap().remove("timing");
    std::fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    let (out, v) = diagnose_json(&[p(&run), "--baseline", p(&base)]);
    assert!(v["rates"].is_null());
    assert!(stderr(&out).contains("rate section omitted"), "{}", stderr(&out));
}

#[test]
fn diagnose_schema_mismatch() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("r");
    assert!(quick_run(&dir, &[]).status.success());
    let samples = dir.join("samples.csv");
    let text = std::fs::read_to_string(&samples)
        .unwrap()
        .replacen("log_density", "logp", 1);
    std::fs::write(&samples, text).unwrap();
    let out = partmc(&["diagnose", p(&dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("log_density"), "{}", stderr(&out));
}

#[test]
fn benchmark_grid_rows() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("grid.csv");
    let out = partmc(&[
        "benchmark",
        "--target",
        "mix2d",
        "--subspaces",
        "1,4",
        "--budgets",
        "1,2",
        "--repetitions",
        "2",
        "--samples-per-chain",
        "500",
        "--workers",
        "2",
        "-o",
        p(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 2);
    let col = header.iter().position(|h| *h == "subspaces").unwrap();
    let mut s: Vec<&str> = rows.iter().map(|r| r[col]).collect();
    s.dedup();
    assert_eq!(s, ["1", "4"]);
    assert!(rows.iter().all(|r| r.len() == header.len()));
}
