//! Reference dynamic program on a deliberately small lattice.
//!
//! An independent implementation of the market maker's problem used to
//! certify the finite-difference solver before trusting large runs: the
//! price moves as an explicit trinomial chain whose probabilities match
//! the Brownian mean (0) and variance (`σ²Δt`) on the non-uniform mesh,
//! executions are Bernoulli events, and one backward induction maximizes
//! over all four control pairs at every state by brute force. No shared
//! update code, no parallelism, no algebraic shortcuts — auditability
//! over speed.
//!
//! The chain shares the solver's branch-slot layout and its continuity
//! rule at band edges (a crossing move lands in the post-jump world), so
//! a discrepancy localizes to the update arithmetic or the control logic,
//! not to state bookkeeping.

use crate::error::{Error, Result};
use crate::hjb::grid::StateGrid;
use crate::hjb::solver::ValueGrid;
use crate::hjb::{running_penalty, terminal_value, ModelParams};
use crate::tolerances::MOMENT_MATCH_REL;
use crate::zones::TickConfig;

/// Size caps keeping the brute-force program auditable and fast.
const MAX_NODES: usize = 200;
const MAX_STEPS: usize = 400;
const MAX_QMAX: i32 = 2;

/// How a one-step execution probability is derived from the intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillModel {
    /// `intensity·Δt` — identical to the finite-difference weights, the
    /// certification default.
    #[default]
    Linear,
    /// `1 − exp(−intensity·Δt)` — identical to the simulator's Bernoulli
    /// thinning; differs from the solver at order `Δt²`.
    ExpThinning,
}

/// A validated coarse lattice: grid, transition probabilities and fill
/// model.
#[derive(Debug, Clone)]
pub struct LatticeSpec {
    pub grid: StateGrid,
    pub fill: FillModel,
}

impl LatticeSpec {
    /// Validates the size caps, the trinomial probabilities (in `[0,1]`,
    /// total mass ≤ 1 together with both maximal fill weights) and the
    /// moment-matching residuals of every interior node.
    pub fn new(grid: StateGrid, fill: FillModel, params: &ModelParams) -> Result<Self> {
        if grid.n_nodes() > MAX_NODES {
            return Err(Error::invalid(
                "lattice",
                format!("{} price nodes exceed the {MAX_NODES}-node cap", grid.n_nodes()),
            ));
        }
        if grid.n_steps > MAX_STEPS {
            return Err(Error::invalid(
                "lattice",
                format!("{} time steps exceed the {MAX_STEPS}-step cap", grid.n_steps),
            ));
        }
        if grid.q_max > MAX_QMAX {
            return Err(Error::invalid(
                "lattice",
                format!("q_max {} exceeds the cap {MAX_QMAX}", grid.q_max),
            ));
        }

        let spec = Self { grid, fill };
        let wa = spec.fill_weight(params.reduced_rate(spec.grid.tick.alpha_a));
        let wb = spec.fill_weight(params.reduced_rate(spec.grid.tick.alpha_b));
        let sigma2_dt = params.sigma * params.sigma * spec.grid.dt;
        let n = spec.grid.n_nodes();
        for i in 0..n {
            let (pd, pu) = (spec.grid.p_minus[i], spec.grid.p_plus[i]);
            for (what, p) in [("down probability", pd), ("up probability", pu)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::ProbabilityRange { what: what.into(), value: p });
                }
            }
            let total = pd + pu + wa + wb;
            if total > 1.0 {
                return Err(Error::ProbabilityRange {
                    what: format!("total one-step mass at node {i}"),
                    value: total,
                });
            }
            if i > 0 && i + 1 < n {
                let h_m = spec.grid.s[i] - spec.grid.s[i - 1];
                let h_p = spec.grid.s[i + 1] - spec.grid.s[i];
                let mean = -pd * h_m + pu * h_p;
                let var = pd * h_m * h_m + pu * h_p * h_p;
                if mean.abs() > MOMENT_MATCH_REL * sigma2_dt.sqrt()
                    || (var - sigma2_dt).abs() > MOMENT_MATCH_REL * sigma2_dt
                {
                    return Err(Error::NumericalCheck(format!(
                        "trinomial moments off at node {i}: mean residual {mean:.3e}, \
                         variance residual {:.3e}",
                        var - sigma2_dt
                    )));
                }
            }
        }
        Ok(spec)
    }

    fn fill_weight(&self, rate: f64) -> f64 {
        match self.fill {
            FillModel::Linear => rate * self.grid.dt,
            FillModel::ExpThinning => 1.0 - (-rate * self.grid.dt).exp(),
        }
    }
}

/// Full backward-induction output: every time slice of values and the
/// maximizing control pair per state (`bit 0` = ask presence).
#[derive(Debug, Clone)]
pub struct OracleTable {
    /// `slices[m][entry]` for every time node `m = 0..=n_steps`.
    pub slices: Vec<Vec<f64>>,
    /// `policy[m][entry]`: maximizer of the slice-`m` values (ties keep
    /// the all-absent pair; enumeration order (0,0),(0,1),(1,0),(1,1)).
    pub policy: Vec<Vec<u8>>,
    pub slice_len: usize,
}

/// Brute-force backward induction over the lattice.
///
/// At each state the program enumerates the four control pairs and takes
/// the best total of: execution events (probability-weighted cash plus
/// post-trade continuation), the trinomial price move, the no-event
/// remainder, and the running inventory penalty over the step.
pub fn oracle_value(
    spec: &LatticeSpec,
    cfg: &TickConfig,
    params: &ModelParams,
) -> Result<OracleTable> {
    params.validate()?;
    if spec.grid.tick.alpha_a != cfg.alpha_a || spec.grid.tick.alpha_b != cfg.alpha_b {
        return Err(Error::invalid("lattice", "tick configuration differs from the grid's"));
    }
    let grid = &spec.grid;
    let nq = grid.nq();
    let n = grid.n_nodes();
    let len = grid.slice_len();
    let m_total = grid.n_steps;

    let weight_a = spec.fill_weight(params.reduced_rate(cfg.alpha_a));
    let weight_b = spec.fill_weight(params.reduced_rate(cfg.alpha_b));

    let mut slices = vec![Vec::new(); m_total + 1];
    let mut policy = vec![vec![0u8; len]; m_total + 1];

    // Terminal slice.
    let mut terminal = vec![0.0; len];
    for i in 0..n {
        for ba in 0..2 {
            for bb in 0..2 {
                for qi in 0..nq {
                    let q = qi as i32 - grid.q_max;
                    terminal[grid.idx(i, ba, bb, qi)] = terminal_value(grid.s[i], q, params.a);
                }
            }
        }
    }
    slices[m_total] = terminal;

    for m in (0..m_total).rev() {
        let next = &slices[m + 1];
        let mut cur = vec![0.0; len];
        let mut pol = vec![0u8; len];
        for i in 0..n {
            for ba in 0..2 {
                for bb in 0..2 {
                    for qi in 0..nq {
                        let (v, choice) =
                            best_over_controls(next, spec, cfg, weight_a, weight_b, i, ba, bb, qi);
                        let e = grid.idx(i, ba, bb, qi);
                        cur[e] = v + running_penalty(qi as i32 - grid.q_max, params) * grid.dt;
                        pol[e] = choice;
                    }
                }
            }
        }
        // The maximizer of the slice-(m+1) values is the control pair the
        // step just applied.
        policy[m + 1] = pol;
        slices[m] = cur;
    }
    // Controls at t = 0 maximize the t = 0 slice.
    policy[0] = argmax_slice(&slices[0], spec, cfg, weight_a, weight_b);

    Ok(OracleTable { slices, policy, slice_len: len })
}

/// Expected one-step total for one state under one control pair.
#[allow(clippy::too_many_arguments)]
fn pair_value(
    next: &[f64],
    spec: &LatticeSpec,
    cfg: &TickConfig,
    i: usize,
    ba: usize,
    bb: usize,
    qi: usize,
    ell_a: bool,
    ell_b: bool,
    weight_a: f64,
    weight_b: f64,
) -> f64 {
    let grid = &spec.grid;
    let nq = grid.nq();
    let world_a = grid.ask[i].world(ba);
    let world_b = grid.bid[i].world(bb);
    let base = grid.idx(i, ba, bb, 0);

    let wa = if ell_a && qi > 0 { weight_a } else { 0.0 };
    let wb = if ell_b && qi + 1 < nq { weight_b } else { 0.0 };

    let mut total = 0.0;
    if wa > 0.0 {
        let s_a = world_a as f64 * cfg.alpha_a;
        total += wa * (s_a + next[base + qi - 1]);
    }
    if wb > 0.0 {
        let s_b = world_b as f64 * cfg.alpha_b;
        total += wb * (-s_b + next[base + qi + 1]);
    }

    let (pd, pu) = (grid.p_minus[i], grid.p_plus[i]);
    if pd > 0.0 {
        let slot_a = grid.ask[i - 1].resolve(world_a);
        let slot_b = grid.bid[i - 1].resolve(world_b);
        total += pd * next[grid.idx(i - 1, slot_a, slot_b, qi)];
    }
    if pu > 0.0 {
        let slot_a = grid.ask[i + 1].resolve(world_a);
        let slot_b = grid.bid[i + 1].resolve(world_b);
        total += pu * next[grid.idx(i + 1, slot_a, slot_b, qi)];
    }
    total += (1.0 - pd - pu - wa - wb) * next[base + qi];
    total
}

/// Enumerates the four control pairs; strict improvement replaces, so
/// ties keep the earliest (all-absent-first) pair.
#[allow(clippy::too_many_arguments)]
fn best_over_controls(
    next: &[f64],
    spec: &LatticeSpec,
    cfg: &TickConfig,
    weight_a: f64,
    weight_b: f64,
    i: usize,
    ba: usize,
    bb: usize,
    qi: usize,
) -> (f64, u8) {
    let mut best = f64::NEG_INFINITY;
    let mut choice = 0u8;
    for (code, (ell_a, ell_b)) in
        [(0u8, (false, false)), (2, (false, true)), (1, (true, false)), (3, (true, true))]
    {
        let v = pair_value(next, spec, cfg, i, ba, bb, qi, ell_a, ell_b, weight_a, weight_b);
        if v > best {
            best = v;
            choice = code;
        }
    }
    // A control whose fill weight is suppressed (inventory bound) must
    // read back as absent.
    let qi_max = spec.grid.nq() - 1;
    if qi == 0 {
        choice &= !1;
    }
    if qi == qi_max {
        choice &= !2;
    }
    (best, choice)
}

fn argmax_slice(
    slice: &[f64],
    spec: &LatticeSpec,
    cfg: &TickConfig,
    weight_a: f64,
    weight_b: f64,
) -> Vec<u8> {
    let grid = &spec.grid;
    let mut out = vec![0u8; slice.len()];
    for i in 0..grid.n_nodes() {
        for ba in 0..2 {
            for bb in 0..2 {
                for qi in 0..grid.nq() {
                    let e = grid.idx(i, ba, bb, qi);
                    let (_, choice) =
                        best_over_controls(slice, spec, cfg, weight_a, weight_b, i, ba, bb, qi);
                    out[e] = choice;
                }
            }
        }
    }
    out
}

/// Largest absolute value discrepancy between the oracle table and a
/// solver run, with its location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub max_abs: f64,
    /// `(time node, flat state index)` attaining the maximum.
    pub at: (usize, usize),
}

/// Compares every oracle slice against the solver's stored slices.
///
/// Requires identical index sets: same slice length and a solver run
/// that stored every time node (stride 1).
pub fn compare(oracle: &OracleTable, solver: &ValueGrid) -> Result<Comparison> {
    let n_times = oracle.slices.len();
    let stored: Vec<usize> = solver.stored_times().collect();
    if stored.len() != n_times || stored.iter().enumerate().any(|(k, &m)| k != m) {
        return Err(Error::ShapeMismatch(format!(
            "solver stored {} slices, oracle has {n_times}; certification needs every time node",
            stored.len()
        )));
    }
    let mut best = Comparison { max_abs: -1.0, at: (0, 0) };
    for (m, oracle_slice) in oracle.slices.iter().enumerate() {
        let solver_slice = solver.at(m).expect("checked above");
        if solver_slice.len() != oracle.slice_len || oracle_slice.len() != oracle.slice_len {
            return Err(Error::ShapeMismatch(format!(
                "slice {m}: solver has {} entries, oracle {}",
                solver_slice.len(),
                oracle_slice.len()
            )));
        }
        for (e, (&a, &b)) in oracle_slice.iter().zip(solver_slice.iter()).enumerate() {
            let d = (a - b).abs();
            if d > best.max_abs {
                best = Comparison { max_abs: d, at: (m, e) };
            }
        }
    }
    best.max_abs = best.max_abs.max(0.0);
    Ok(best)
}
