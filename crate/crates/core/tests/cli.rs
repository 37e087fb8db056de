use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn drmtl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_drmtl"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn convergence_rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"max_iter": 150, "N": 6, "edges": 8}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = drmtl(&["convergence", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["config"]["seed"].is_u64(), "missing seed is generated and recorded");
    assert_eq!(manifest["command"], "convergence");
    let out = drmtl(&["convergence", "--config", a.join("manifest.json").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success());
    for name in ["trace_alg1.csv", "trace_alg2.csv", "accuracy_alg1.csv", "accuracy_alg2.csv", "oracle.json", "adaptive.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn manifest_records_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let out = drmtl(&["validate-params", "--seed", "3", "--algorithm", "1", "--out", a.to_str().unwrap()]);
    assert!(out.status.success());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let config = manifest["config"].as_object().unwrap();
    for key in ["N", "edges", "b", "n", "nu", "mu1", "mu2", "mu3", "mu12", "rho", "gamma", "tau", "zeta", "upsilon", "iota", "theta", "t_d", "R_f", "K", "F", "M", "s", "mode", "algorithm", "max_iter", "seed"] {
        assert!(config.contains_key(key) && !config[key].is_null(), "{key}");
    }
    assert_eq!(config["seed"], 3);
}

#[test]
fn zero_iterations_give_the_initial_row_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"max_iter": 0, "seed": 1}"#);
    let out_dir = dir.path().join("o");
    let out = drmtl(&["convergence", "--config", &cfg, "--algorithm", "1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let trace = fs::read_to_string(out_dir.join("trace_alg1.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,"));
    assert!(!out_dir.join("trace_alg2.csv").exists());
}

#[test]
fn full_cache_hits_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"theta": [20], "repetitions": 2, "seed": 5}"#);
    let out_dir = dir.path().join("o");
    let out = drmtl(&["caching", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(out_dir.join("results.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["seed", "theta", "iota", "policy", "preference_source", "hit_ratio", "epsilon"]);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        assert_eq!(record[5].parse::<f64>().unwrap(), 1.0);
        rows += 1;
    }
    assert_eq!(rows, 2 * 3);
}

#[test]
fn paper_defaults_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = drmtl(&["validate-params", "--seed", "8", "--mode", "paper-defaults", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    for entry in report.as_array().unwrap() {
        assert_eq!(entry["report"]["ok"], false);
        let violations = entry["report"]["violations"].as_array().unwrap();
        assert!(violations.iter().any(|v| v.as_str().unwrap().contains("tau")));
    }
    let safe_dir = dir.path().join("safe");
    let out = drmtl(&["validate-params", "--seed", "8", "--mode", "theorem-safe", "--out", safe_dir.to_str().unwrap()]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.as_array().unwrap().iter().all(|e| e["report"]["ok"] == true));
}

#[test]
fn preference_writes_errors_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"repetitions": 2, "seed": 11}"#);
    let out_dir = dir.path().join("o");
    let out = drmtl(&["preference", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let eps = fs::read_to_string(out_dir.join("epsilon.csv")).unwrap();
    assert_eq!(eps.lines().count(), 3);
    let prefs: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("preferences.json")).unwrap()).unwrap();
    let first = &prefs[0];
    assert_eq!(first["seed"], 11);
    for p in first["p_hat_alg2"].as_array().unwrap().iter().filter(|p| !p.is_null()) {
        let sum: f64 = p.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ingest_traces_discretizes() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    fs::write(
        &traj,
        "mt_id,timestamp_iso8601,lat,lon\n\
         u1,2008-10-23T02:53:04Z,39.975,116.305\n\
         u1,2008-10-23T02:55:04Z,39.975,116.305\n\
         u1,2008-10-23T02:58:04Z,40.015,116.345\n",
    )
    .unwrap();
    let cfg = write_config(dir.path(), &format!(r#"{{"trajectory_file": {:?}}}"#, traj.to_str().unwrap()));
    let out_dir = dir.path().join("o");
    let out = drmtl(&["ingest-traces", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seqs: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("sequences.json")).unwrap()).unwrap();
    let u1 = seqs["u1"].as_array().unwrap();
    assert_eq!(u1.first().unwrap()["state"], 0);
    assert_eq!(u1.last().unwrap()["state"], 8);
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rho": "one"}"#);
    let out = drmtl(&["convergence", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = drmtl(&["ingest-traces", "--out", dir.path().join("p").to_str().unwrap()]);
    assert!(!out.status.success());
}
