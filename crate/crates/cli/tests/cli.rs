//! End-to-end tests of the `tickopt` binary: figure presets, output
//! provenance, determinism, the estimator round trip, and exit codes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tickopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tickopt"))
        .args(args)
        .output()
        .expect("spawning tickopt")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?})\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Coarse-grid overrides so every solve in this file finishes in
/// milliseconds; structure, not accuracy, is under test here.
const FAST: &[&str] = &[
    "--set",
    "grid.ds=0.01",
    "--set",
    "grid.margin=3.0",
    "--set",
    "grid.time_refine=1.0",
    "--set",
    "model.horizon=10.0",
];

fn read_csv(path: &Path) -> Vec<HashMap<String, String>> {
    let mut reader = csv::Reader::from_path(path)
        .unwrap_or_else(|e| panic!("opening {}: {e}", path.display()));
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    reader
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().cloned().zip(rec.iter().map(String::from)).collect()
        })
        .collect()
}

fn f(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("field {key} = {:?} is not a number", row[key]))
}

#[test]
fn fig1_writes_rows_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("fig1");
    let out = tickopt(
        &[&["figure", "fig1", "--out", out_path.to_str().unwrap()], FAST].concat(),
    );
    assert_success(&out, "figure fig1");

    let rows = read_csv(&out_path.join("fig1.csv"));
    // 6 aligned ticks × 3 penalty passes.
    assert_eq!(rows.len(), 18, "fig1 should have 18 rows");
    for row in &rows {
        assert!(f(row, "alpha") >= 0.0045 && f(row, "alpha") <= 0.05);
        assert!([0.0, 0.0005, 0.005].contains(&f(row, "phi_minus")));
        assert!(f(row, "v").is_finite() && f(row, "h").is_finite());
    }

    // Provenance: expanded config plus a tool version string.
    let cfg_text = fs::read_to_string(out_path.join("config.toml")).unwrap();
    assert!(cfg_text.contains("tool_version"), "config.toml should record the tool version");
    assert!(cfg_text.contains("preset = \"fig1\""), "config.toml should record the preset");
    assert!(cfg_text.contains("ds = 0.01"), "config.toml should hold the applied overrides");
    let version = fs::read_to_string(out_path.join("version.txt")).unwrap();
    assert!(version.starts_with("tickopt "), "version.txt: {version:?}");

    // Scan-backed figures also keep the raw scan next to the figure data.
    assert!(out_path.join("scan.csv").exists());
    assert!(out_path.join("argmax.json").exists());
    let argmax: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_path.join("argmax.json")).unwrap()).unwrap();
    assert_eq!(argmax.as_array().map(|a| a.len()), Some(3), "one argmax record per pass");
}

#[test]
fn fig2_matches_fig1_differences_row_for_row() {
    let dir = tempfile::tempdir().unwrap();
    let d1 = dir.path().join("fig1");
    let d2 = dir.path().join("fig2");
    let out1 = tickopt(&[&["figure", "fig1", "--out", d1.to_str().unwrap()], FAST].concat());
    assert_success(&out1, "figure fig1");
    let out2 = tickopt(&[&["figure", "fig2", "--out", d2.to_str().unwrap()], FAST].concat());
    assert_success(&out2, "figure fig2");

    let fig1 = read_csv(&d1.join("fig1.csv"));
    let fig2 = read_csv(&d2.join("fig2.csv"));
    assert_eq!(fig2.len(), 12, "fig2 drops the zero-penalty pass");

    let key = |alpha: f64, phi: f64| format!("{alpha:.9}|{phi:.9}");
    let mut h1 = HashMap::new();
    let mut v1 = HashMap::new();
    for row in &fig1 {
        h1.insert(key(f(row, "alpha"), f(row, "phi_minus")), f(row, "h"));
        v1.insert(key(f(row, "alpha"), f(row, "phi_minus")), f(row, "v"));
    }
    for row in &fig2 {
        let alpha = f(row, "alpha");
        let phi = f(row, "phi_minus");
        assert!(phi != 0.0, "fig2 must not contain the baseline pass");
        let want_dh = h1[&key(alpha, phi)] - h1[&key(alpha, 0.0)];
        let want_dv = v1[&key(alpha, phi)] - v1[&key(alpha, 0.0)];
        // Both runs execute the same deterministic scan, and CSV floats
        // round-trip exactly, so the differences must match bit for bit.
        assert_eq!(f(row, "dh"), want_dh, "dh at alpha = {alpha}, phi = {phi}");
        assert_eq!(f(row, "dv"), want_dv, "dv at alpha = {alpha}, phi = {phi}");
    }
}

#[test]
fn solve_is_deterministic_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let d1 = dir.path().join("a");
    let d2 = dir.path().join("b");
    for d in [&d1, &d2] {
        let out = tickopt(&[&["solve", "--out", d.to_str().unwrap()], FAST].concat());
        assert_success(&out, "solve");
    }
    for name in ["values.csv", "policy.csv", "summary.json", "config.toml"] {
        let a = fs::read(d1.join(name)).unwrap();
        let b = fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn simulate_then_estimate_eta_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    let eta_dir = dir.path().join("eta");
    let out = tickopt(
        &[
            &[
                "simulate",
                "--out",
                sim_dir.to_str().unwrap(),
                "--set",
                "sim.n_paths=40",
                "--set",
                "sim.dt_sim=0.002",
                "--set",
                "sim.log_paths=2",
                "--seed",
                "99",
            ],
            FAST,
        ]
        .concat(),
    );
    assert_success(&out, "simulate");
    assert!(sim_dir.join("paths.csv").exists());
    assert!(sim_dir.join("transactions-1.csv").exists(), "second logged path");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_paths"], 40);
    let cfg_text = fs::read_to_string(sim_dir.join("config.toml")).unwrap();
    assert!(cfg_text.contains("seed = 99"), "--seed must land in the dumped config");

    let log = sim_dir.join("transactions-0.csv");
    let out = tickopt(&[
        "estimate-eta",
        "--input",
        log.to_str().unwrap(),
        "--out",
        eta_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "estimate-eta");
    let rows = read_csv(&eta_dir.join("eta.csv"));
    assert_eq!(rows.len(), 2, "one eta row per side");
    for row in &rows {
        assert!(row["side"] == "a" || row["side"] == "b");
        if !row["eta_hat"].is_empty() {
            let eta = f(row, "eta_hat");
            assert!((0.0..=1.0).contains(&eta), "eta_hat = {eta} out of range");
        }
    }
}

#[test]
fn unknown_config_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[model]\nsgima = 0.01\n").unwrap();
    let out = tickopt(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "validation failures must exit 1");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sgima"), "error should name the offending key, got: {stderr}");
}

#[test]
fn bad_override_and_bad_preset_exit_one() {
    let out = tickopt(&["figure", "fig9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig9"));

    let out = tickopt(&["solve", "--set", "grid.ds"]);
    assert_eq!(out.status.code(), Some(1), "--set without '=' must exit 1");

    let out = tickopt(&["figure"]);
    assert_eq!(out.status.code(), Some(1), "figure without a preset must exit 1");

    let out = tickopt(&["--help"]);
    assert_eq!(out.status.code(), Some(0), "--help exits 0");
}
