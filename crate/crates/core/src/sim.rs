//! Monte Carlo simulator of the quoting model.
//!
//! Paths evolve in four sub-steps per time increment, in this order:
//!
//! 1. **Policy lookup** at the step's start state: nearest price node
//!    compatible with the current worlds ([`StateGrid::policy_node`]),
//!    nearest stored time node at or after the clock time, world indices
//!    resolved to branch slots. A start price outside the meshed domain
//!    flags the path as excluded and ends it.
//! 2. **Fills**: one Bernoulli draw per side with probability
//!    `1 − exp(−intensity·Δt)`; the intensity is zero when the side is
//!    switched off or its inventory cutoff binds, so at most one fill per
//!    side per step and the inventory never leaves `[−q_max, q_max]`.
//!    An ask fill earns the ask fair price and decrements inventory; a bid
//!    fill pays the bid fair price and increments it.
//! 3. **Running penalty and rate accounting** accrue on the step's starting
//!    inventory (left-endpoint rule, matching the backward scheme).
//! 4. **Diffusion**: the efficient price moves by `σ√Δt·ξ`, then each
//!    side's fair price is re-anchored by the exact index-space update.
//!    Crossings are detected at the end of the step; a move of several
//!    ticks is logged as that many one-tick events with the same timestamp.
//!
//! Per-path randomness comes from one counter-based generator seeded from
//! the run seed with the path index as the stream, so results are
//! reproducible bit for bit regardless of thread count, and any path can
//! be replayed in isolation.

use crate::error::{Error, Result};
use crate::hjb::grid::StateGrid;
use crate::hjb::solver::{initial_world, PolicyGrid};
use crate::hjb::{running_penalty, side_active, terminal_value, ModelParams};
use crate::zones::{
    estimate_eta, fair_index_update, reconstruct_efficient_price, require_on_grid, write_price_changes,
    PriceChange, PriceChangeSeries, Side,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Simulation run settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Requested simulation time step; the effective step divides the
    /// horizon exactly and must not exceed the solver grid's `Δt`.
    pub dt_sim: f64,
    /// Number of independent paths.
    pub n_paths: usize,
    /// Run seed. Path `k` uses stream `k` of a generator seeded with this.
    pub seed: u64,
    /// Initial efficient price.
    pub s0: f64,
    /// Initial inventory.
    pub q0: i32,
    /// Initial ask fair price. Must lie on the ask tick grid and be
    /// admissible at `s0`; defaults to the tick multiple nearest `s0`.
    pub s_a0: Option<f64>,
    /// Initial bid fair price (same rules on the bid grid).
    pub s_b0: Option<f64>,
    /// Number of leading paths whose full price-change logs are retained.
    pub log_paths: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_sim: 1e-3,
            n_paths: 10_000,
            seed: 12345,
            s0: 10.5,
            q0: 0,
            s_a0: None,
            s_b0: None,
            log_paths: 1,
        }
    }
}

impl SimConfig {
    fn validate(&self, grid: &StateGrid) -> Result<()> {
        if !(self.dt_sim > 0.0) || !self.dt_sim.is_finite() {
            return Err(Error::invalid("dt_sim", format!("must be positive, got {}", self.dt_sim)));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "must be at least 1"));
        }
        if !self.s0.is_finite() || !grid.contains(self.s0) {
            return Err(Error::invalid(
                "s0",
                format!("initial price {} lies outside the meshed domain", self.s0),
            ));
        }
        if self.q0.abs() > grid.q_max {
            return Err(Error::invalid(
                "q0",
                format!("initial inventory {} exceeds the bound {}", self.q0, grid.q_max),
            ));
        }
        Ok(())
    }

    /// Initial fair-price indices `(ask, bid)`: explicit prices are checked
    /// for grid membership and admissibility at `s0`; missing ones default
    /// to the nearest tick multiple.
    fn initial_worlds(&self, grid: &StateGrid) -> Result<(i64, i64)> {
        let tick = &grid.tick;
        let resolve = |given: Option<f64>, alpha: f64, eta: f64, name: &str| -> Result<i64> {
            match given {
                None => Ok(initial_world(self.s0, alpha)),
                Some(p) => {
                    let idx = require_on_grid(p, alpha)?;
                    let slack = (0.5 + eta) * alpha * (1.0 + 1e-9);
                    if (self.s0 - p).abs() > slack {
                        return Err(Error::invalid(
                            name,
                            format!("fair price {p} is not admissible at s0 = {}", self.s0),
                        ));
                    }
                    Ok(idx)
                }
            }
        };
        let w_a = resolve(self.s_a0, tick.alpha_a, tick.eta_a, "s_a0")?;
        let w_b = resolve(self.s_b0, tick.alpha_b, tick.eta_b, "s_b0")?;
        Ok((w_a, w_b))
    }
}

/// Full market state along one path.
#[derive(Debug, Clone)]
pub struct MarketState {
    /// Clock time.
    pub t: f64,
    /// Efficient price.
    pub s: f64,
    /// Ask fair price (`world_a · α_a`).
    pub s_a: f64,
    /// Bid fair price.
    pub s_b: f64,
    /// Inventory.
    pub q: i32,
    /// Cash account.
    pub x: f64,
    /// Ask executions so far.
    pub n_a: u64,
    /// Bid executions so far.
    pub n_b: u64,
    /// Ask fair-price index.
    pub world_a: i64,
    /// Bid fair-price index.
    pub world_b: i64,
    /// Grid node of the previous policy lookup; warm-starts the next one
    /// (a pure performance hint, maintained by [`step`]).
    pub node_hint: usize,
}

impl MarketState {
    /// Fresh state at `t = 0` with no cash and no fills.
    pub fn new(s0: f64, q0: i32, world_a: i64, world_b: i64, grid: &StateGrid) -> Self {
        Self {
            t: 0.0,
            s: s0,
            s_a: world_a as f64 * grid.tick.alpha_a,
            s_b: world_b as f64 * grid.tick.alpha_b,
            q: q0,
            x: 0.0,
            n_a: 0,
            n_b: 0,
            world_a,
            world_b,
            node_hint: grid.nearest_node(s0),
        }
    }
}

/// What happened during one simulation step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepRecord {
    /// Ask quote present over the step.
    pub ell_a: bool,
    /// Bid quote present over the step.
    pub ell_b: bool,
    /// The ask quote executed.
    pub filled_ask: bool,
    /// The bid quote executed.
    pub filled_bid: bool,
    /// Signed ask fair-index move over the step.
    pub moves_a: i64,
    /// Signed bid fair-index move over the step.
    pub moves_b: i64,
    /// Ask execution probability the fill draw was tested against.
    pub p_fill_ask: f64,
    /// Bid execution probability.
    pub p_fill_bid: f64,
    /// The policy lookup failed because the price left the meshed domain;
    /// the state was not advanced.
    pub off_grid: bool,
}

/// Probability that a quote at reduced intensity `rate` executes within
/// `dt` (exponential thinning, computed stably for small exponents).
pub fn fill_probability(rate: f64, dt: f64) -> f64 {
    -(-rate * dt).exp_m1()
}

/// Per-run constants of the stepping loop, hoisted out of the hot path.
///
/// Everything here is a pure function of the policy, grid, model, and step
/// length, so precomputing changes nothing observable: the stored fill
/// probabilities equal `fill_probability(side's reduced rate, dt)` exactly
/// (the bang-bang intensities take no other nonzero value), the diffusion
/// scale is the same `σ·√dt` product the per-step expression evaluated,
/// and the time-node table caches `time_node_at_or_after(k·dt)` per step.
pub struct StepCtx<'a> {
    /// Stored controls being simulated.
    pub policy: &'a PolicyGrid,
    /// State mesh the controls were computed on.
    pub grid: &'a StateGrid,
    /// Model parameters.
    pub params: &'a ModelParams,
    /// Step length.
    pub dt: f64,
    vol_step: f64,
    p_on: [f64; 2],
    time_node: Vec<u32>,
}

impl<'a> StepCtx<'a> {
    /// Precomputes stepping constants for `n_steps` steps of length `dt`.
    pub fn new(
        policy: &'a PolicyGrid,
        grid: &'a StateGrid,
        params: &'a ModelParams,
        dt: f64,
        n_steps: usize,
    ) -> Self {
        let rate_a = params.reduced_rate(grid.tick.alpha_a);
        let rate_b = params.reduced_rate(grid.tick.alpha_b);
        Self {
            policy,
            grid,
            params,
            dt,
            vol_step: params.sigma * dt.sqrt(),
            p_on: [fill_probability(rate_a, dt), fill_probability(rate_b, dt)],
            time_node: (0..n_steps.max(1))
                .map(|k| grid.time_node_at_or_after(k as f64 * dt) as u32)
                .collect(),
        }
    }
}

/// Advances `state` by one step of length `ctx.dt`, the `step_index`-th of
/// the path (the step covers clock times `[step_index·dt, (step_index+1)·dt)`).
///
/// Draw order is fixed (ask uniform, bid uniform, diffusion normal), so a
/// given generator state determines the step outcome exactly. Fill
/// probabilities use the inventory at the start of the step for both
/// sides, so a simultaneous double fill is gated consistently.
pub fn step(
    state: &mut MarketState,
    step_index: usize,
    ctx: &StepCtx,
    rng: &mut impl Rng,
) -> StepRecord {
    let grid = ctx.grid;
    if !grid.contains(state.s) {
        return StepRecord { off_grid: true, ..StepRecord::default() };
    }
    let (node, hint) = grid.policy_node_hinted(state.s, state.world_a, state.world_b, state.node_hint);
    state.node_hint = hint;
    let m = ctx.time_node[step_index] as usize;
    let (ell_a, ell_b) = ctx.policy.controls(m, grid, node, state.world_a, state.world_b, state.q);

    let tick = &grid.tick;
    let u_a: f64 = rng.gen();
    let u_b: f64 = rng.gen();
    let xi: f64 = StandardNormal.sample(rng);

    // `intensity` is the side's reduced rate behind the quote/cutoff gate,
    // so the fill probability is the precomputed one behind the same gate.
    let p_fill_ask =
        if ell_a && side_active(Side::Ask, state.q, grid.q_max) { ctx.p_on[0] } else { 0.0 };
    let p_fill_bid =
        if ell_b && side_active(Side::Bid, state.q, grid.q_max) { ctx.p_on[1] } else { 0.0 };
    let filled_ask = u_a < p_fill_ask;
    let filled_bid = u_b < p_fill_bid;
    if filled_ask {
        state.x += state.s_a;
        state.q -= 1;
        state.n_a += 1;
    }
    if filled_bid {
        state.x -= state.s_b;
        state.q += 1;
        state.n_b += 1;
    }
    debug_assert!(state.q.abs() <= grid.q_max, "inventory cutoffs keep q inside the box");

    state.s += ctx.vol_step * xi;

    let w_a = fair_index_update(state.world_a, state.s, tick.alpha_a, tick.eta_a);
    let w_b = fair_index_update(state.world_b, state.s, tick.alpha_b, tick.eta_b);
    let record = StepRecord {
        ell_a,
        ell_b,
        filled_ask,
        filled_bid,
        moves_a: w_a - state.world_a,
        moves_b: w_b - state.world_b,
        p_fill_ask,
        p_fill_bid,
        off_grid: false,
    };
    state.world_a = w_a;
    state.world_b = w_b;
    state.s_a = w_a as f64 * tick.alpha_a;
    state.s_b = w_b as f64 * tick.alpha_b;
    state.t = (step_index + 1) as f64 * ctx.dt;
    record
}

/// Outcome of one path.
#[derive(Debug, Clone, Serialize)]
pub struct PathResult {
    /// Path index (also the generator stream).
    pub path: usize,
    /// Terminal wealth: cash plus marked-and-penalized inventory minus the
    /// accumulated running penalty.
    pub mm_objective: f64,
    /// Platform revenue by execution counting: `c · (N_a + N_b)`.
    pub exchange_revenue: f64,
    /// Platform revenue by compensator integration along the path: the
    /// fee times the summed per-step execution probabilities, which
    /// converges to the intensity integral as the step shrinks. Unlike
    /// the raw intensity integral it agrees with execution counting in
    /// expectation at any step size.
    pub rate_revenue: f64,
    /// Ask executions.
    pub n_a: u64,
    /// Bid executions.
    pub n_b: u64,
    /// Terminal inventory.
    pub q_t: i32,
    /// Terminal efficient price.
    pub s_t: f64,
    /// Terminal cash.
    pub x_t: f64,
    /// Cash received across ask executions.
    pub ask_cash: f64,
    /// Cash paid across bid executions.
    pub bid_cash: f64,
    /// The path left the meshed domain and is excluded from aggregates.
    pub excluded: bool,
}

/// Retained price-change log of one path, in the transaction-ingestion
/// format: per-side reference prices plus one-tick change events.
#[derive(Debug, Clone, Serialize)]
pub struct LoggedPath {
    /// Path index.
    pub path: usize,
    /// Initial fair prices `[ask, bid]` (the pre-series references).
    pub initial_price: [f64; 2],
    /// One-tick change events, time-ordered, sides interleaved.
    pub events: Vec<PriceChange>,
}

impl LoggedPath {
    /// View of the log as a price-change series (both references known).
    pub fn to_series(&self) -> PriceChangeSeries {
        PriceChangeSeries {
            events: self.events.clone(),
            initial_price: [Some(self.initial_price[0]), Some(self.initial_price[1])],
            skipped_multi_tick: 0,
        }
    }
}

/// Per-side within-path trackers for direction pairs and reconstruction
/// accuracy.
#[derive(Debug, Clone, Copy, Default)]
struct SideTracker {
    prev_dir: Option<i8>,
    n_alt: u64,
    n_cont: u64,
    n_changes: u64,
    recon_err_sum: f64,
    straddle_violations: u64,
}

/// Aggregated simulation output. Per-path details stay in `paths`;
/// the scalar fields summarize included (non-excluded) paths only.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// Effective time step (divides the horizon exactly).
    pub dt: f64,
    /// Steps per path.
    pub n_steps: usize,
    /// Paths simulated.
    pub n_paths: usize,
    /// Paths excluded for leaving the meshed domain.
    pub n_excluded: usize,
    /// Mean market-maker objective.
    pub mm_mean: f64,
    /// Standard error of the mean objective.
    pub mm_se: f64,
    /// Mean platform revenue (execution counting).
    pub revenue_mean: f64,
    /// Standard error of counting revenue.
    pub revenue_se: f64,
    /// Mean platform revenue (compensator integration).
    pub rate_revenue_mean: f64,
    /// Standard error of rate revenue.
    pub rate_revenue_se: f64,
    /// Mean ask executions per path.
    pub na_mean: f64,
    /// Mean bid executions per path.
    pub nb_mean: f64,
    /// Direction alternations per side `[ask, bid]`.
    pub alternations: [u64; 2],
    /// Direction continuations per side.
    pub continuations: [u64; 2],
    /// Retained one-tick price changes per side.
    pub n_price_changes: [u64; 2],
    /// Per-side estimate of the zone half-width parameter, when defined.
    pub eta_hat: [Option<f64>; 2],
    /// Mean absolute error of the edge-based efficient-price
    /// reconstruction at change times, both sides pooled.
    pub recon_mean_abs_error: f64,
    /// Reconstructions falling outside the step's price bracket.
    pub recon_straddle_violations: u64,
    /// Per-path outcomes (all paths, excluded ones flagged).
    #[serde(skip)]
    pub paths: Vec<PathResult>,
    /// Full logs of the first `log_paths` paths.
    #[serde(skip)]
    pub logged: Vec<LoggedPath>,
}

impl SimResult {
    /// Total retained price changes, both sides.
    pub fn total_price_changes(&self) -> u64 {
        self.n_price_changes[0] + self.n_price_changes[1]
    }
}

/// Splits a signed multi-tick fair-index move into one-tick events,
/// updating direction-pair counts, reconstruction statistics, and (when
/// given) the event log.
#[allow(clippy::too_many_arguments)]
fn record_side_moves(
    side: Side,
    w_pre: i64,
    moves: i64,
    alpha: f64,
    eta: f64,
    s_pre: f64,
    s_post: f64,
    t_event: f64,
    tracker: &mut SideTracker,
    mut events: Option<&mut Vec<PriceChange>>,
) -> Result<()> {
    if moves == 0 {
        return Ok(());
    }
    let dir: i8 = if moves > 0 { 1 } else { -1 };
    let lo = s_pre.min(s_post);
    let hi = s_pre.max(s_post);
    for j in 1..=moves.abs() {
        let w_new = w_pre + j * i64::from(dir);
        let w_old = w_new - i64::from(dir);
        let recon =
            reconstruct_efficient_price(w_new as f64 * alpha, w_old as f64 * alpha, alpha, eta)?;
        tracker.recon_err_sum += (recon - s_post).abs();
        let fuzz = 1e-9 * recon.abs().max(1.0);
        if recon < lo - fuzz || recon > hi + fuzz {
            tracker.straddle_violations += 1;
        }
        if let Some(prev) = tracker.prev_dir {
            if prev == dir {
                tracker.n_cont += 1;
            } else {
                tracker.n_alt += 1;
            }
        }
        tracker.prev_dir = Some(dir);
        tracker.n_changes += 1;
        if let Some(log) = events.as_deref_mut() {
            log.push(PriceChange { time: t_event, price: w_new as f64 * alpha, side });
        }
    }
    Ok(())
}

/// In-flight state of one path inside a simulation block.
struct PathSlot {
    path: usize,
    rng: ChaCha8Rng,
    st: MarketState,
    trackers: [SideTracker; 2],
    events: Option<Vec<PriceChange>>,
    penalty_integral: f64,
    rate_revenue: f64,
    ask_cash: f64,
    bid_cash: f64,
    excluded: bool,
}

/// Paths advanced together through time per block: one policy time slice
/// then serves every path in the block while it is cache-resident, instead
/// of being re-fetched once per path. Outcomes are identical to stepping
/// each path to completion on its own — paths never interact and each
/// consumes only its own generator stream.
const BLOCK_PATHS: usize = 4096;

#[allow(clippy::too_many_arguments)]
fn simulate_block(
    first_path: usize,
    count: usize,
    ctx: &StepCtx,
    cfg: &SimConfig,
    n_steps: usize,
    w_a0: i64,
    w_b0: i64,
) -> Result<Vec<(PathResult, [SideTracker; 2], Option<Vec<PriceChange>>)>> {
    let (grid, params, dt) = (ctx.grid, ctx.params, ctx.dt);
    let tick = &grid.tick;
    let mut slots: Vec<PathSlot> = (first_path..first_path + count)
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(path as u64);
            PathSlot {
                path,
                rng,
                st: MarketState::new(cfg.s0, cfg.q0, w_a0, w_b0, grid),
                trackers: [SideTracker::default(), SideTracker::default()],
                events: if path < cfg.log_paths { Some(Vec::new()) } else { None },
                penalty_integral: 0.0,
                rate_revenue: 0.0,
                ask_cash: 0.0,
                bid_cash: 0.0,
                excluded: false,
            }
        })
        .collect();

    for k in 0..n_steps {
        let t = k as f64 * dt;
        let t_event = t + dt;
        for slot in &mut slots {
            if slot.excluded {
                continue;
            }
            let st = &mut slot.st;
            let s_pre = st.s;
            let q_pre = st.q;
            let w_a_pre = st.world_a;
            let w_b_pre = st.world_b;
            let s_a_pre = st.s_a;
            let s_b_pre = st.s_b;
            let rec = step(st, k, ctx, &mut slot.rng);
            if rec.off_grid {
                slot.excluded = true;
                continue;
            }
            slot.penalty_integral += running_penalty(q_pre, params) * dt;
            slot.rate_revenue += params.c * (rec.p_fill_ask + rec.p_fill_bid);
            if rec.filled_ask {
                slot.ask_cash += s_a_pre;
            }
            if rec.filled_bid {
                slot.bid_cash += s_b_pre;
            }
            if rec.moves_a != 0 {
                record_side_moves(
                    Side::Ask,
                    w_a_pre,
                    rec.moves_a,
                    tick.alpha_a,
                    tick.eta_a,
                    s_pre,
                    st.s,
                    t_event,
                    &mut slot.trackers[0],
                    slot.events.as_mut(),
                )?;
            }
            if rec.moves_b != 0 {
                record_side_moves(
                    Side::Bid,
                    w_b_pre,
                    rec.moves_b,
                    tick.alpha_b,
                    tick.eta_b,
                    s_pre,
                    st.s,
                    t_event,
                    &mut slot.trackers[1],
                    slot.events.as_mut(),
                )?;
            }
        }
    }

    Ok(slots
        .into_iter()
        .map(|slot| {
            let st = slot.st;
            let mm_objective =
                st.x + terminal_value(st.s, st.q, params.a) + slot.penalty_integral;
            let result = PathResult {
                path: slot.path,
                mm_objective,
                exchange_revenue: params.c * (st.n_a + st.n_b) as f64,
                rate_revenue: slot.rate_revenue,
                n_a: st.n_a,
                n_b: st.n_b,
                q_t: st.q,
                s_t: st.s,
                x_t: st.x,
                ask_cash: slot.ask_cash,
                bid_cash: slot.bid_cash,
                excluded: slot.excluded,
            };
            (result, slot.trackers, slot.events)
        })
        .collect())
}

/// Sample mean and standard error of the mean (zero SE below two samples).
fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs the Monte Carlo simulation under a stored policy.
///
/// The effective step divides the horizon exactly (`Δt_eff = T / round(T /
/// dt_sim)`) and must not exceed the grid's solver step. Paths run in
/// parallel; aggregation order is fixed by path index, so all output is
/// deterministic for a given seed.
pub fn run_paths(
    policy: &PolicyGrid,
    grid: &StateGrid,
    params: &ModelParams,
    cfg: &SimConfig,
) -> Result<SimResult> {
    params.validate()?;
    cfg.validate(grid)?;
    if policy.n_times != grid.n_steps + 1 || policy.slice_entries != grid.slice_len() {
        return Err(Error::ShapeMismatch(format!(
            "policy is {} slices × {} states, grid wants {} × {}",
            policy.n_times,
            policy.slice_entries,
            grid.n_steps + 1,
            grid.slice_len()
        )));
    }
    let n_steps = (params.horizon / cfg.dt_sim).round().max(1.0) as usize;
    let dt = params.horizon / n_steps as f64;
    if dt > grid.dt * (1.0 + 1e-9) {
        return Err(Error::invalid(
            "dt_sim",
            format!("effective step {dt:.3e} exceeds the solver step {:.3e}", grid.dt),
        ));
    }
    let (w_a0, w_b0) = cfg.initial_worlds(grid)?;
    let ctx = StepCtx::new(policy, grid, params, dt, n_steps);

    let n_blocks = cfg.n_paths.div_ceil(BLOCK_PATHS);
    let per_block = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let first = b * BLOCK_PATHS;
            let count = BLOCK_PATHS.min(cfg.n_paths - first);
            simulate_block(first, count, &ctx, cfg, n_steps, w_a0, w_b0)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_path: Vec<_> = per_block.into_iter().flatten().collect();

    let tick = &grid.tick;
    let mut paths = Vec::with_capacity(cfg.n_paths);
    let mut logged = Vec::new();
    let mut alternations = [0u64; 2];
    let mut continuations = [0u64; 2];
    let mut n_price_changes = [0u64; 2];
    let mut recon_err_sum = 0.0;
    let mut straddle = 0u64;
    for (res, trackers, events) in per_path {
        if !res.excluded {
            for (k, tr) in trackers.iter().enumerate() {
                alternations[k] += tr.n_alt;
                continuations[k] += tr.n_cont;
                n_price_changes[k] += tr.n_changes;
                recon_err_sum += tr.recon_err_sum;
                straddle += tr.straddle_violations;
            }
        }
        if let Some(events) = events {
            logged.push(LoggedPath {
                path: res.path,
                initial_price: [w_a0 as f64 * tick.alpha_a, w_b0 as f64 * tick.alpha_b],
                events,
            });
        }
        paths.push(res);
    }

    let included: Vec<&PathResult> = paths.iter().filter(|p| !p.excluded).collect();
    if included.is_empty() {
        return Err(Error::invalid(
            "simulation",
            "every path left the meshed domain; enlarge the grid margin",
        ));
    }
    let (mm_mean, mm_se) = mean_se(included.iter().map(|p| p.mm_objective));
    let (revenue_mean, revenue_se) = mean_se(included.iter().map(|p| p.exchange_revenue));
    let (rate_revenue_mean, rate_revenue_se) = mean_se(included.iter().map(|p| p.rate_revenue));
    let (na_mean, _) = mean_se(included.iter().map(|p| p.n_a as f64));
    let (nb_mean, _) = mean_se(included.iter().map(|p| p.n_b as f64));
    let total_changes = n_price_changes[0] + n_price_changes[1];
    let recon_mean_abs_error =
        if total_changes > 0 { recon_err_sum / total_changes as f64 } else { 0.0 };
    let eta_hat = [
        estimate_eta(continuations[0], alternations[0]),
        estimate_eta(continuations[1], alternations[1]),
    ];
    let n_excluded = paths.len() - included.len();

    Ok(SimResult {
        dt,
        n_steps,
        n_paths: cfg.n_paths,
        n_excluded,
        mm_mean,
        mm_se,
        revenue_mean,
        revenue_se,
        rate_revenue_mean,
        rate_revenue_se,
        na_mean,
        nb_mean,
        alternations,
        continuations,
        n_price_changes,
        eta_hat,
        recon_mean_abs_error,
        recon_straddle_violations: straddle,
        paths,
        logged,
    })
}

/// The two platform-revenue estimators with their standard errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RevenueEstimates {
    /// Execution-counting estimator mean.
    pub counting_mean: f64,
    /// Its standard error.
    pub counting_se: f64,
    /// Compensator-integration estimator mean.
    pub rate_mean: f64,
    /// Its standard error.
    pub rate_se: f64,
}

impl RevenueEstimates {
    /// Gap between the estimators in units of their combined standard
    /// error (zero when both are exact and equal).
    pub fn gap_in_se(&self) -> f64 {
        let combined = (self.counting_se * self.counting_se + self.rate_se * self.rate_se).sqrt();
        let gap = (self.counting_mean - self.rate_mean).abs();
        if combined > 0.0 {
            gap / combined
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// True when the estimators agree within `n_se` combined standard
    /// errors.
    pub fn consistent(&self, n_se: f64) -> bool {
        self.gap_in_se() <= n_se
    }
}

/// Extracts both platform-revenue estimators from a simulation result.
pub fn exchange_revenue_estimators(result: &SimResult) -> RevenueEstimates {
    RevenueEstimates {
        counting_mean: result.revenue_mean,
        counting_se: result.revenue_se,
        rate_mean: result.rate_revenue_mean,
        rate_se: result.rate_revenue_se,
    }
}

#[derive(Serialize)]
struct PathRow {
    path: usize,
    mm_objective: f64,
    exchange_revenue: f64,
    #[serde(rename = "N_a")]
    n_a: u64,
    #[serde(rename = "N_b")]
    n_b: u64,
    #[serde(rename = "Q_T")]
    q_t: i32,
}

/// Writes the per-path results (included paths only) as CSV with columns
/// `path,mm_objective,exchange_revenue,N_a,N_b,Q_T`.
pub fn write_path_csv<W: Write>(writer: W, result: &SimResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in result.paths.iter().filter(|p| !p.excluded) {
        w.serialize(PathRow {
            path: p.path,
            mm_objective: p.mm_objective,
            exchange_revenue: p.exchange_revenue,
            n_a: p.n_a,
            n_b: p.n_b,
            q_t: p.q_t,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one path's price-change log in the transaction-ingestion format
/// (`time,price,side`), prepending the per-side reference rows so the file
/// round-trips through transaction ingestion unchanged.
pub fn write_transaction_log<W: Write>(writer: W, log: &LoggedPath) -> Result<()> {
    let mut rows = Vec::with_capacity(log.events.len() + 2);
    rows.push(PriceChange { time: 0.0, price: log.initial_price[0], side: Side::Ask });
    rows.push(PriceChange { time: 0.0, price: log.initial_price[1], side: Side::Bid });
    rows.extend_from_slice(&log.events);
    write_price_changes(writer, &rows)
}
