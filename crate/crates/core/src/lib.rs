//! Numerical toolkit for tick-size design on a two-grid market.
//!
//! A market maker quotes on an ask grid with tick `α_a` and a bid grid
//! with tick `α_b`, around an efficient price that diffuses between the
//! ticks. Each side's *fair price* moves one tick only when the efficient
//! price leaves an uncertainty band around it, so the fair prices are
//! hysteretic step processes. The crate provides:
//!
//! * [`zones`] — the fair-price jump rule, admissible-world bookkeeping,
//!   the band-width estimator from price-change statistics, and
//!   efficient-price reconstruction from tick data.
//! * [`hjb`] — a finite-difference solver for the market maker's optimal
//!   presence problem (bang-bang controls on both sides), including the
//!   branch couplings across band edges and a fused transport equation
//!   for the platform's expected fee revenue.
//! * [`oracle`] — a small brute-force dynamic program certifying the
//!   solver on coarse lattices.
//! * [`sim`] — a Monte Carlo simulator of the controlled market with
//!   deterministic substreams.
//! * [`exchange`] — the platform's tick-size objective `v(α_a, α_b)` and
//!   its maximization over tick grids.
//!
//! All tolerances that pin numerical contracts live in [`tolerances`].

pub mod error;
pub mod exchange;
pub mod hjb;
pub mod oracle;
pub mod sim;
pub mod tolerances;
pub mod zones;

pub use error::{Error, Result};
pub use hjb::{
    grid::{build_grid, build_grid_refined, SideWorlds, StateGrid},
    solver::{
        backward_step, branch_profile, export_value_csv, initial_world, optimal_controls, solve,
        solve_with, terminal_slice, BranchProfileRow, FeeValues, PolicyGrid, SolveOptions,
        SolveOutput, ValueGrid, WorkingPoint,
    },
    intensity, running_penalty, side_active, terminal_value, ModelParams,
};
pub use exchange::{
    grid_search, large_tick_bounds, platform_value, write_argmax_json, write_scan_csv,
    ArgmaxRecord, Method, PlatformValue, ScanPoint, ScanRejection, ScanResult, ScanSpec, TickSet,
    ValuationSpec,
};
pub use sim::{
    exchange_revenue_estimators, fill_probability, run_paths, step, write_path_csv,
    write_transaction_log, LoggedPath, MarketState, PathResult, RevenueEstimates, SimConfig,
    SimResult, StepCtx, StepRecord,
};
pub use zones::{
    count_alternations_continuations, estimate_eta, eta_for_tick, fair_price_update,
    reconstruct_efficient_price, valid_branches, zone_bounds, BranchSet, PriceChange,
    PriceChangeSeries, Side, TickConfig,
};
