//! Command implementations. Every command prepares its output directory by
//! dumping the fully expanded configuration and the tool version, then
//! writes its data files; all file contents are deterministic for a fixed
//! configuration (timings go to stdout, never into files).

use std::fs::{self, File};
use std::io;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use tickopt_core::oracle::{compare, oracle_value, LatticeSpec};
use tickopt_core::tolerances::ORACLE_CERT_ABS;
use tickopt_core::zones::{eta_report, read_transactions_path, write_eta_report, write_price_changes};
use tickopt_core::{
    branch_profile, build_grid, build_grid_refined, export_value_csv, grid_search, run_paths,
    solve_with, write_argmax_json, write_path_csv, write_scan_csv, write_transaction_log, Error,
    PolicyGrid, ScanResult, SolveOptions, SolveOutput, StateGrid,
};

use crate::config::{ExperimentConfig, Figure};

/// Creates the output directory and dumps the expanded config plus the
/// tool version, so the directory alone reproduces the run.
fn prepare_out_dir(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut dump = cfg.clone();
    dump.tool_version = env!("CARGO_PKG_VERSION").to_string();
    let body = toml::to_string_pretty(&dump).context("serializing expanded config")?;
    fs::write(
        dir.join("config.toml"),
        format!("# fully expanded tickopt configuration (rerun with --config)\n{body}"),
    )?;
    fs::write(dir.join("version.txt"), format!("tickopt {}\n", env!("CARGO_PKG_VERSION")))?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> anyhow::Result<File> {
    File::create(dir.join(name)).with_context(|| format!("creating {}/{name}", dir.display()))
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct InventoryRow {
    q: i32,
    h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_fills: Option<(f64, f64)>,
}

#[derive(Serialize)]
struct SolveSummary {
    tool_version: String,
    s_ref: f64,
    working_node_price: f64,
    world_a: i64,
    world_b: i64,
    n_nodes: usize,
    n_steps: usize,
    dt: f64,
    by_inventory: Vec<InventoryRow>,
}

fn solve_summary(cfg: &ExperimentConfig, out: &SolveOutput) -> SolveSummary {
    let wp = out.working_point();
    let q_max = out.grid.q_max;
    SolveSummary {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        s_ref: cfg.grid.s_ref,
        working_node_price: out.grid.s[wp.node],
        world_a: wp.world_a,
        world_b: wp.world_b,
        n_nodes: out.grid.n_nodes(),
        n_steps: out.grid.n_steps,
        dt: out.grid.dt,
        by_inventory: (-q_max..=q_max)
            .map(|q| InventoryRow {
                q,
                h: out.h0(q),
                v: out.v0(q),
                expected_fills: out.expected_fills0(q),
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct PolicyRow {
    #[serde(rename = "S")]
    s: f64,
    world_a: i64,
    world_b: i64,
    q: i32,
    ell_a: u8,
    ell_b: u8,
}

/// Writes the time-zero controls, one row per distinct state.
fn write_policy_csv<W: io::Write>(
    writer: W,
    grid: &StateGrid,
    policy: &PolicyGrid,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for i in 0..grid.n_nodes() {
        let (aw, bw) = (grid.ask[i], grid.bid[i]);
        for ba in 0..aw.n() {
            for bb in 0..bw.n() {
                for qi in 0..grid.nq() {
                    let (ell_a, ell_b) = policy.get(0, grid.idx(i, ba, bb, qi));
                    w.serialize(PolicyRow {
                        s: grid.s[i],
                        world_a: aw.world(ba),
                        world_b: bw.world(bb),
                        q: qi as i32 - grid.q_max,
                        ell_a: ell_a as u8,
                        ell_b: ell_b as u8,
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run_solve(cfg: &ExperimentConfig) -> anyhow::Result<SolveOutput> {
    let params = cfg.model.params();
    let tick = cfg.ticks.tick_config()?;
    let grid = build_grid_refined(
        &tick,
        &params,
        cfg.grid.s_ref,
        cfg.grid.ds,
        cfg.grid.margin,
        cfg.grid.time_refine,
    )?;
    Ok(solve_with(&tick, &params, &grid, &cfg.solve.options())?)
}

pub fn solve(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    prepare_out_dir(cfg, dir)?;
    let t0 = Instant::now();
    let out = run_solve(cfg)?;
    export_value_csv(&out, create(dir, "values.csv")?)?;
    if let Some(policy) = &out.policy {
        write_policy_csv(create(dir, "policy.csv")?, &out.grid, policy)?;
    }
    let summary = solve_summary(cfg, &out);
    serde_json::to_writer_pretty(create(dir, "summary.json")?, &summary)?;
    println!(
        "solve: {} nodes x {} steps in {:.2}s, h(q=0) = {:.6}{} -> {}",
        out.grid.n_nodes(),
        out.grid.n_steps,
        t0.elapsed().as_secs_f64(),
        out.h0(0),
        match out.v0(0) {
            Some(v) => format!(", v(q=0) = {v:.6}"),
            None => String::new(),
        },
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    prepare_out_dir(cfg, dir)?;
    let params = cfg.model.params();
    let tick = cfg.ticks.tick_config()?;
    let grid = build_grid_refined(
        &tick,
        &params,
        cfg.grid.s_ref,
        cfg.grid.ds,
        cfg.grid.margin,
        cfg.grid.time_refine,
    )?;
    // The simulator only needs the control grid; skip value storage.
    let opts = SolveOptions {
        store_values: false,
        store_policy: true,
        fee_pde: false,
        value_budget_bytes: cfg.solve.options().value_budget_bytes,
    };
    let t0 = Instant::now();
    let out = solve_with(&tick, &params, &grid, &opts)?;
    let policy = out.policy.as_ref().expect("policy storage was requested");
    let sim_cfg = cfg.sim.sim_config(cfg.grid.s_ref, cfg.initial.q0);
    let sim = run_paths(policy, &out.grid, &params, &sim_cfg)?;

    serde_json::to_writer_pretty(create(dir, "summary.json")?, &sim)?;
    write_path_csv(create(dir, "paths.csv")?, &sim)?;
    for log in &sim.logged {
        write_transaction_log(create(dir, &format!("transactions-{}.csv", log.path))?, log)?;
    }
    println!(
        "simulate: {} paths x {} steps in {:.2}s, objective {:.6} +/- {:.6} (solver h = {:.6}) -> {}",
        sim.n_paths,
        sim.n_steps,
        t0.elapsed().as_secs_f64(),
        sim.mm_mean,
        sim.mm_se,
        out.h0(cfg.initial.q0),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// scan
// ---------------------------------------------------------------------------

fn run_scan(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<ScanResult> {
    let spec = cfg.scan_spec();
    let params = cfg.model.params();
    let t0 = Instant::now();
    let result = grid_search(&spec, &params)?;
    write_scan_csv(create(dir, "scan.csv")?, &result)?;
    write_argmax_json(create(dir, "argmax.json")?, &result)?;
    println!(
        "scan: {} points ({} rejected) in {:.2}s -> {}",
        result.points.len(),
        result.rejected.len(),
        t0.elapsed().as_secs_f64(),
        dir.display()
    );
    for rec in &result.argmax {
        println!(
            "  phi_minus = {:>7.4}: best v = {:.6} at ({:.6}, {:.6}), best h = {:.6} at ({:.6}, {:.6})",
            rec.phi_minus,
            rec.best_v.v,
            rec.best_v.alpha_a,
            rec.best_v.alpha_b,
            rec.best_h.h_mm,
            rec.best_h.alpha_a,
            rec.best_h.alpha_b,
        );
    }
    Ok(result)
}

pub fn scan(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    prepare_out_dir(cfg, dir)?;
    run_scan(cfg, dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate-eta
// ---------------------------------------------------------------------------

pub fn estimate_eta(cfg: &ExperimentConfig, input: &Path, dir: &Path) -> anyhow::Result<()> {
    prepare_out_dir(cfg, dir)?;
    let tick = cfg.ticks.tick_config()?;
    let rows = read_transactions_path(input)?;
    let series = tickopt_core::PriceChangeSeries::from_transactions(&rows, &tick);
    let report = eta_report(&series, &tick);
    write_eta_report(create(dir, "eta.csv")?, &report)?;
    write_price_changes(create(dir, "price_changes.csv")?, &series.events)?;
    for row in &report {
        println!(
            "estimate-eta: side {} (alpha = {}): eta_hat = {}, {} alternations, {} continuations",
            row.side,
            row.alpha,
            row.eta_hat.map_or("undefined".to_string(), |e| format!("{e:.4}")),
            row.n_alt,
            row.n_cont,
        );
    }
    if series.skipped_multi_tick > 0 {
        println!(
            "estimate-eta: skipped {} multi-tick jumps (only one-tick moves are informative)",
            series.skipped_multi_tick
        );
    }
    println!("estimate-eta: wrote {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OracleReport {
    tool_version: String,
    max_abs_difference: f64,
    at_time_node: usize,
    at_state: usize,
    tolerance: f64,
    pass: bool,
    n_nodes: usize,
    n_steps: usize,
}

pub fn oracle_check(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    prepare_out_dir(cfg, dir)?;
    let mut params = cfg.model.params();
    params.q_max = cfg.oracle.q_max;
    params.horizon = cfg.oracle.horizon;
    let tick = cfg.ticks.tick_config()?;
    let grid = build_grid(&tick, &params, cfg.grid.s_ref, cfg.oracle.ds, cfg.oracle.margin)?;
    let opts = SolveOptions {
        store_values: true,
        value_budget_bytes: 1 << 30,
        store_policy: false,
        fee_pde: false,
    };
    let t0 = Instant::now();
    let out = solve_with(&tick, &params, &grid, &opts)?;
    let spec = LatticeSpec::new(out.grid.clone(), cfg.oracle.fill.to_model(), &params)?;
    let table = oracle_value(&spec, &tick, &params)?;
    let cmp = compare(&table, &out.values)?;
    let pass = cmp.max_abs <= ORACLE_CERT_ABS;
    let report = OracleReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        max_abs_difference: cmp.max_abs,
        at_time_node: cmp.at.0,
        at_state: cmp.at.1,
        tolerance: ORACLE_CERT_ABS,
        pass,
        n_nodes: out.grid.n_nodes(),
        n_steps: out.grid.n_steps,
    };
    serde_json::to_writer_pretty(create(dir, "report.json")?, &report)?;
    println!(
        "oracle-check: max |solver - oracle| = {:.3e} (tolerance {:.1e}) over {} nodes x {} steps in {:.2}s -> {}",
        cmp.max_abs,
        ORACLE_CERT_ABS,
        out.grid.n_nodes(),
        out.grid.n_steps,
        t0.elapsed().as_secs_f64(),
        dir.display()
    );
    if !pass {
        return Err(Error::NumericalCheck(format!(
            "oracle-check: max |solver - oracle| = {:.3e} exceeds {:.1e}",
            cmp.max_abs, ORACLE_CERT_ABS
        ))
        .into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// figure
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SymRow {
    alpha: f64,
    phi_minus: f64,
    h: f64,
    v: f64,
}

#[derive(Serialize)]
struct SymDiffRow {
    alpha: f64,
    phi_minus: f64,
    dh: f64,
    dv: f64,
}

#[derive(Serialize)]
struct AskRow {
    alpha_a: f64,
    phi_minus: f64,
    h: f64,
    v: f64,
}

#[derive(Serialize)]
struct BidRow {
    alpha_b: f64,
    phi_minus: f64,
    h: f64,
    v: f64,
}

#[derive(Serialize)]
struct SurfaceRow {
    alpha_a: f64,
    alpha_b: f64,
    h: f64,
    v: f64,
}

#[derive(Serialize)]
struct SurfaceDiffRow {
    alpha_a: f64,
    alpha_b: f64,
    dh: f64,
    dv: f64,
}

pub fn figure(cfg: &ExperimentConfig, fig: Figure, dir: &Path) -> anyhow::Result<()> {
    prepare_out_dir(cfg, dir)?;
    if fig == Figure::Appendix {
        return figure_appendix(cfg, dir);
    }
    let scan = run_scan(cfg, dir)?;
    let name = format!("{}.csv", cfg.preset);
    let mut w = csv::Writer::from_writer(create(dir, &name)?);
    match fig {
        Figure::Fig1 => {
            for phi in &cfg.scan.phi_minus {
                for p in scan.points_for(*phi) {
                    w.serialize(SymRow {
                        alpha: p.alpha_a,
                        phi_minus: *phi,
                        h: p.h_mm,
                        v: p.v,
                    })?;
                }
            }
        }
        Figure::Fig2 => {
            // Same scan as fig1 with the zero-penalty pass used as the
            // baseline: rows are the per-tick differences.
            let base: Vec<_> = scan.points_for(0.0).collect();
            for phi in cfg.scan.phi_minus.iter().filter(|&&p| p != 0.0) {
                for (p, b) in scan.points_for(*phi).zip(base.iter()) {
                    w.serialize(SymDiffRow {
                        alpha: p.alpha_a,
                        phi_minus: *phi,
                        dh: p.h_mm - b.h_mm,
                        dv: p.v - b.v,
                    })?;
                }
            }
        }
        Figure::Fig3 => {
            for phi in &cfg.scan.phi_minus {
                for p in scan.points_for(*phi) {
                    w.serialize(AskRow {
                        alpha_a: p.alpha_a,
                        phi_minus: *phi,
                        h: p.h_mm,
                        v: p.v,
                    })?;
                }
            }
        }
        Figure::Fig4 | Figure::Fig5 => {
            let phi = cfg.scan.phi_minus[0];
            for p in scan.points_for(phi) {
                w.serialize(SurfaceRow {
                    alpha_a: p.alpha_a,
                    alpha_b: p.alpha_b,
                    h: p.h_mm,
                    v: p.v,
                })?;
            }
        }
        Figure::Fig6 => {
            let base: Vec<_> = scan.points_for(0.0).collect();
            for (p, b) in scan.points_for(0.005).zip(base.iter()) {
                w.serialize(SurfaceDiffRow {
                    alpha_a: p.alpha_a,
                    alpha_b: p.alpha_b,
                    dh: p.h_mm - b.h_mm,
                    dv: p.v - b.v,
                })?;
            }
        }
        Figure::Fig7 => {
            for phi in &cfg.scan.phi_minus {
                for p in scan.points_for(*phi) {
                    w.serialize(BidRow {
                        alpha_b: p.alpha_b,
                        phi_minus: *phi,
                        h: p.h_mm,
                        v: p.v,
                    })?;
                }
            }
        }
        Figure::Appendix => unreachable!("handled above"),
    }
    w.flush()?;
    println!("figure {}: wrote {}", cfg.preset, dir.join(&name).display());
    Ok(())
}

/// Value against the price axis with all four branch-slot curves at the
/// initial time and configured inventory. Rows carry the per-node world
/// counts, which mark the zone boundaries (2 = inside a zone, 1 = outside).
fn figure_appendix(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    let out = run_solve(cfg)?;
    let rows = branch_profile(&out, 0, cfg.initial.q0)?;
    let mut w = csv::Writer::from_writer(create(dir, "appendix.csv")?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let two_a = rows.iter().filter(|r| r.n_a == 2).count();
    let two_b = rows.iter().filter(|r| r.n_b == 2).count();
    println!(
        "figure appendix: {} price nodes ({} in an ask zone, {} in a bid zone) -> {}",
        rows.len(),
        two_a,
        two_b,
        dir.join("appendix.csv").display()
    );
    Ok(())
}
