use std::path::Path;

use slabdecay_cli::run;

fn invoke(cmd: &str, config: Option<&Path>, out: &Path) -> i32 {
    let mut args = vec!["slabdecay".to_string(), cmd.to_string(), "--out".into(), out.display().to_string()];
    if let Some(c) = config {
        args.push("--config".into());
        args.push(c.display().to_string());
    }
    run(args)
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p
}

/// Data rows of a CSV written by the tool (comment lines and header skipped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn dispersion_writes_one_row_per_modulus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"symbol": {"family": "fractional", "r": 0.5}}"#);
    let out = dir.path().join("out");
    assert_eq!(invoke("dispersion", Some(&cfg), &out), 0);
    let r = rows(&out.join("dispersion.csv"));
    assert_eq!(r.len(), 8);
    assert!(r.iter().all(|row| row.len() == 10 && row[9].is_empty()));
    let text = std::fs::read_to_string(out.join("dispersion.csv")).unwrap();
    assert!(text.lines().nth(3).unwrap().starts_with("xi_mod,mu,method,rho_re,rho_im"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dispersion_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["result"]["bracket"]["all_pass"], true);
    // every default is echoed
    assert_eq!(summary["config"]["tolerances"]["dispersion"]["bisect_max_iter"], 200);
}

#[test]
fn degenerate_gravity_is_an_in_row_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"symbol": {"family": "fractional", "g": 3.0, "sigma": 0.0}, "dispersion": {"moduli": [0.01, 64]}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(invoke("dispersion", Some(&cfg), &out), 0);
    let r = rows(&out.join("dispersion.csv"));
    assert_eq!(r[0][2], "low_freq");
    assert!(r[0][9].contains("degenerate"), "{:?}", r[0]);
    assert!(r[1][9].is_empty());
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(invoke("dispersion", Some(&dir.path().join("nope.json")), dir.path()), 2);
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), r#"{"evolve": {"dt": 0.0}}"#);
    assert_eq!(invoke("evolve", Some(&cfg), &out), 2);
    let cfg = write_config(dir.path(), r#"{"evolve": {"steps": 3}}"#);
    assert_eq!(invoke("evolve", Some(&cfg), &out), 2);
    assert_eq!(run(["slabdecay", "frobnicate"]), 2);
}

#[test]
fn heat_config_recovers_the_heat_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"evolve": {"xi_mod": 0.0, "initial": "heat", "n_cells": 256, "dt": 0.001, "t_end": 2.0, "fit_window": [0.25, 2.0]}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(invoke("evolve", Some(&cfg), &out), 0);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("evolve_summary.json")).unwrap()).unwrap();
    let rate = s["result"]["fit"]["rate"].as_f64().unwrap();
    assert!((rate / (std::f64::consts::PI.powi(2) / 2.0) - 1.0).abs() < 0.02, "{rate}");
    let r = rows(&out.join("evolve.csv"));
    // startup half steps add samples
    assert!(r.len() >= 2001);
    assert!((r.last().unwrap()[0].parse::<f64>().unwrap() - 2.0).abs() < 1e-9);
    assert!(out.join("final_state.json").exists());
}

#[test]
fn zero_data_reports_a_fit_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"evolve": {"initial": "zero", "t_end": 1.0, "dt": 0.01}}"#);
    let out = dir.path().join("out");
    assert_eq!(invoke("evolve", Some(&cfg), &out), 0);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("evolve_summary.json")).unwrap()).unwrap();
    assert!(s["result"]["fit"].is_null());
    assert!(s["result"]["fit_error"].as_str().unwrap().contains("fit domain"));
    assert!(rows(&out.join("evolve.csv")).iter().all(|r| r[1..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0)));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"synthesis": {"lattice_radius": 3, "t_end": 5.0}, "dispersion": {"moduli": [0.05, 1, 16]}, "seed": 11}"#,
    );
    let out = dir.path().join("out");
    let files = ["synthesis_curve.csv", "synthesis_modes.csv", "synthesis_report.json", "dispersion.csv", "sweep.csv"];
    let mut first = Vec::new();
    for round in 0..2 {
        assert_eq!(invoke("synthesize", Some(&cfg), &out), 0);
        assert_eq!(invoke("dispersion", Some(&cfg), &out), 0);
        assert_eq!(invoke("sweep", Some(&cfg), &out), 0);
        let now: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
        if round == 0 {
            first = now;
        } else {
            assert_eq!(first, now);
        }
    }
}

#[test]
fn sweep_rates_track_the_roots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"dispersion": {"moduli": [0.5, 2, 8]}}"#);
    let out = dir.path().join("out");
    assert_eq!(invoke("sweep", Some(&cfg), &out), 0);
    for r in rows(&out.join("sweep.csv")) {
        let ratio: f64 = r[7].parse().unwrap();
        assert!((ratio - 1.0).abs() < 0.02, "{r:?}");
    }
}

#[test]
fn plane_synthesis_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"synthesis": {"domain": "plane", "data": {"family": "flat_spectrum", "cutoff": 0.5}, "t_end": 20.0,
            "quadrature": {"nodes_per_decade": 8}}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(invoke("synthesize", Some(&cfg), &out), 0);
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("synthesis_report.json")).unwrap()).unwrap();
    assert_eq!(s["result"]["domain"], "plane");
    assert_eq!(s["result"]["laws"].as_array().unwrap().len(), 4);
    assert!(s["result"]["split"].is_array());
}

#[test]
fn verify_subset_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"verify": {"criteria": [1, 2, 12]}}"#);
    let out = dir.path().join("out");
    assert_eq!(invoke("verify", Some(&cfg), &out), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["result"]["passed"], true);
    assert_eq!(v["result"]["criteria"].as_array().unwrap().len(), 3);

    let cfg = write_config(dir.path(), r#"{"verify": {"criteria": [1], "flip_gamma43": true}}"#);
    assert_eq!(invoke("verify", Some(&cfg), &out), 1);
}
