//! Hot-kernel benchmarks: one backward value step, a small full solve, and
//! Monte Carlo path throughput under a solved policy.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use tickopt_core::{
    backward_step, build_grid, run_paths, solve_with, terminal_slice, ModelParams, SimConfig,
    SolveOptions, TickConfig,
};

const NO_STORE: SolveOptions = SolveOptions {
    store_values: false,
    value_budget_bytes: 0,
    store_policy: false,
    fee_pde: false,
};

/// One explicit backward step on a production-sized slice (two-tick state
/// space at ds = 1e-3), measured in state updates per second.
fn bench_backward_step(c: &mut Criterion) {
    let tick = TickConfig::from_scaling(0.3, 0.01, 0.01, 0.00625).unwrap();
    let params = ModelParams::default();
    let grid = build_grid(&tick, &params, 10.5, 1e-3, 4.0).unwrap();
    let next = terminal_slice(&grid, &params);

    let mut group = c.benchmark_group("backward_step");
    group.throughput(Throughput::Elements(grid.slice_len() as u64));
    group.bench_function(format!("{}_states", grid.slice_len()), |b| {
        b.iter(|| backward_step(&next, &grid, &tick, &params).unwrap())
    });
    group.finish();
}

/// A complete coarse solve, the unit of work each scan point costs.
fn bench_solve(c: &mut Criterion) {
    let tick = TickConfig::from_scaling(0.3, 0.01, 0.01, 0.00625).unwrap();
    let params = ModelParams { horizon: 5.0, ..ModelParams::default() };
    let grid = build_grid(&tick, &params, 10.5, 5e-3, 3.0).unwrap();

    let mut group = c.benchmark_group("solve");
    group.sample_size(20);
    group.bench_function(format!("{}x{}", grid.n_nodes(), grid.n_steps), |b| {
        b.iter(|| solve_with(&tick, &params, &grid, &NO_STORE).unwrap())
    });
    group.finish();
}

/// Simulated market steps per second under a stored policy.
fn bench_simulate(c: &mut Criterion) {
    let tick = TickConfig::from_scaling(0.3, 0.01, 0.01, 0.01).unwrap();
    let params = ModelParams { horizon: 5.0, ..ModelParams::default() };
    let grid = build_grid(&tick, &params, 10.5, 5e-3, 3.0).unwrap();
    let opts = SolveOptions { store_policy: true, ..NO_STORE };
    let out = solve_with(&tick, &params, &grid, &opts).unwrap();
    let policy = out.policy.as_ref().unwrap();
    let cfg = SimConfig { dt_sim: 1e-3, n_paths: 32, seed: 7, log_paths: 0, ..SimConfig::default() };
    let steps_per_run = (params.horizon / cfg.dt_sim).round() as u64 * cfg.n_paths as u64;

    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    group.throughput(Throughput::Elements(steps_per_run));
    group.bench_function(format!("{}_paths", cfg.n_paths), |b| {
        b.iter(|| run_paths(policy, &out.grid, &params, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_backward_step, bench_solve, bench_simulate);
criterion_main!(benches);
