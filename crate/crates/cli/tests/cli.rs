use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rieszlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rieszlab")).current_dir(dir).args(args).output().expect("binary runs")
}

fn default_config(dir: &Path) -> String {
    let out = rieszlab(dir, &["default-config"]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

/// A small sampling problem that finishes in about a second.
fn small_config(dir: &Path) -> String {
    default_config(dir)
        .replace("n = 64", "n = 8")
        .replace("sweeps = 20000", "sweeps = 600")
        .replace("burn_in = 2000", "burn_in = 100")
        .replace("thinning = 20", "thinning = 5")
        .replace("chains = 4", "chains = 2")
        .replace("cells = 1024", "cells = 256")
        .replace("scales = [0.125, 0.25, 0.5]", "scales = [0.5, 1.0]")
        .replace("ell = 0.5", "ell = 1.0")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn manifest(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rieszlab(tmp.path(), &["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rieszlab(tmp.path(), &["simulate"]).status.code(), Some(64));
    assert_eq!(rieszlab(tmp.path(), &["equilibrium", "--threads", "0"]).status.code(), Some(64));
}

#[test]
fn coulomb_endpoint_is_rejected_with_the_admissible_range() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &default_config(tmp.path()).replace("s = 0.0", "s = 1.0"));
    let out = rieszlab(tmp.path(), &["equilibrium", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("(d−2, d) = (-1, 1)"), "{err}");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn non_positive_beta_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &default_config(tmp.path()).replace("beta = 2.0", "beta = -1.0"));
    assert_eq!(rieszlab(tmp.path(), &["sample", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn unreadable_or_unknown_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rieszlab(tmp.path(), &["equilibrium", "--config", "absent.toml"]).status.code(), Some(2));
    let cfg = write(tmp.path(), "c.toml", &default_config(tmp.path()).replace("[grid]", "[grid]\nspacing = 0.1"));
    assert_eq!(rieszlab(tmp.path(), &["equilibrium", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn clt_without_an_ensemble_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &default_config(tmp.path()).replace("ensemble = \"runs/sample\"", "ensemble = \"nowhere\""));
    let out = rieszlab(tmp.path(), &["clt", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn equilibrium_run_writes_hashed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_config(tmp.path()));
    let out = rieszlab(tmp.path(), &["equilibrium", "--config", &cfg, "--out", "eq"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("eq/equilibrium/manifest.json"));
    assert_eq!(m["subcommand"], "equilibrium");
    assert_eq!(m["config"]["model"]["n"], 8);
    let artifacts = m["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 2);
    for a in artifacts {
        let path = tmp.path().join("eq/equilibrium").join(a["name"].as_str().unwrap());
        assert_eq!(std::fs::metadata(path).unwrap().len(), a["bytes"].as_u64().unwrap());
        assert_eq!(a["sha256"].as_str().unwrap().len(), 64);
    }
    assert_eq!(m["content_hash"].as_str().unwrap().len(), 64);
    assert!(m["timing"]["started_unix"].is_u64());
}

#[test]
fn same_seed_gives_byte_identical_payloads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_config(tmp.path()));
    let dir = tmp.path().join("runs/sample");
    let mut runs = Vec::new();
    for threads in ["1", "2"] {
        let out = rieszlab(tmp.path(), &["sample", "--config", &cfg, "--seed", "11", "--threads", threads]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let m = manifest(&dir.join("manifest.json"));
        runs.push((std::fs::read(dir.join("energies.csv")).unwrap(), std::fs::read(dir.join("ensemble.bin")).unwrap(), m));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);
    assert_eq!(runs[0].2["content_hash"], runs[1].2["content_hash"]);
    assert_eq!(runs[0].2["artifacts"], runs[1].2["artifacts"]);

    let out = rieszlab(tmp.path(), &["sample", "--config", &cfg, "--seed", "12", "--deterministic"]);
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(&dir.join("manifest.json"));
    assert_ne!(std::fs::read(dir.join("energies.csv")).unwrap(), runs[0].0);
    assert_ne!(m["content_hash"], runs[0].2["content_hash"]);
    assert!(m["timing"].is_null());
}

#[test]
fn clt_reads_a_sampled_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &small_config(tmp.path()));
    assert_eq!(rieszlab(tmp.path(), &["sample", "--config", &cfg]).status.code(), Some(0));
    let out = rieszlab(tmp.path(), &["clt", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("runs/clt/manifest.json"));
    assert!(m["summary"]["predicted_variance"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(tmp.path().join("runs/clt/fluctuations.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("sample,fluctuation,rescaled"));
    assert_eq!(csv.lines().count(), 1 + 2 * 100);
}

#[test]
fn transport_run_reports_residual_and_decay() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rieszlab(tmp.path(), &["transport"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("runs/transport/manifest.json"));
    assert!(m["summary"]["master_residual"]["sup"].as_f64().unwrap() < 1e-2);
    assert!(m["summary"]["decay"]["jump_at_boundary"].as_f64().unwrap() < 0.05);
}
