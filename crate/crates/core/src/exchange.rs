//! Exchange-side tick optimization.
//!
//! The platform earns a fixed fee per executed order, so its expected
//! revenue from one market maker over the trading horizon is a function
//! `v(α_a, α_b)` of the two tick sizes it chooses. For each candidate
//! pair this module solves the quoting problem on its own grid, reads the
//! platform value at the working state (reference price, flat inventory,
//! time zero), and scans a family of tick pairs for the revenue maximum.
//!
//! Two valuation routes are available:
//!
//! * `pde` — integrate the expected-fee transport equation alongside the
//!   backward solve (deterministic, zero standard error);
//! * `mc` — simulate paths under the stored optimal policy and report the
//!   compensator (rate) revenue estimator, which has the same expectation
//!   as fee counting at lower variance;
//! * `both` — compute the two, require agreement within three Monte Carlo
//!   standard errors, and report the Monte Carlo value with the transport
//!   value alongside.
//!
//! Candidate ticks below the large-tick floor `α₀·(η₀/½)²` (where the
//! zone half-width would exceed one half) are recorded as rejected rather
//! than valued.

use crate::error::{Error, Result};
use crate::hjb::grid::build_grid_refined;
use crate::hjb::solver::{solve_with, SolveOptions};
use crate::hjb::ModelParams;
use crate::sim::{run_paths, SimConfig};
use crate::tolerances::MC_SIGMA;
use crate::zones::TickConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Smallest admissible tick under the zone-width scaling law: below
/// `α₀·(η₀/½)²` the implied zone half-width would exceed one half.
pub fn large_tick_bounds(eta_0: f64, alpha_0: f64) -> f64 {
    let ratio = eta_0 / 0.5;
    alpha_0 * ratio * ratio
}

/// How a tick pair is valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Monte Carlo under the stored optimal policy.
    Mc,
    /// Expected-fee transport equation (deterministic).
    Pde,
    /// Both, cross-checked within three Monte Carlo standard errors.
    Both,
}

/// Settings for valuing a single tick pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValuationSpec {
    /// Reference price; the working state sits on its node.
    pub s_ref: f64,
    /// Working-state inventory.
    pub q0: i32,
    /// Base mesh width of the per-pair solve.
    pub ds: f64,
    /// Domain margin in units of `σ√T`.
    pub margin: f64,
    /// Time-step refinement below the stability bound. The stability cap
    /// alone leaves per-step execution weights of order one quarter, which
    /// biases values by several percent; refining in time removes it.
    pub time_refine: f64,
    /// Valuation route.
    pub method: Method,
    /// Monte Carlo paths (`mc`/`both` only).
    pub n_paths: usize,
    /// Requested simulation step, clamped to the solver step (`mc`/`both`).
    pub dt_sim: f64,
    /// Simulation seed (`mc`/`both`).
    pub seed: u64,
}

impl Default for ValuationSpec {
    fn default() -> Self {
        Self {
            s_ref: 10.5,
            q0: 0,
            ds: 2e-3,
            margin: 5.0,
            time_refine: 4.0,
            method: Method::Pde,
            n_paths: 10_000,
            dt_sim: 1e-3,
            seed: 7_050_912,
        }
    }
}

/// Valuation of one tick pair at the working state.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlatformValue {
    /// Ask tick valued.
    pub alpha_a: f64,
    /// Bid tick valued.
    pub alpha_b: f64,
    /// Short-inventory penalty rate in force.
    pub phi_minus: f64,
    /// Platform value (expected total fees).
    pub v: f64,
    /// Standard error of `v` (zero for the transport route).
    pub v_se: f64,
    /// Transport value when `both` was requested (the cross-check).
    pub v_pde: Option<f64>,
    /// Market maker's value at the same working state.
    pub h_mm: f64,
    /// Expected ask executions.
    pub na_mean: f64,
    /// Expected bid executions.
    pub nb_mean: f64,
    /// Monte Carlo paths dropped for leaving the meshed domain.
    pub n_excluded: usize,
}

/// Values one tick pair: builds the pair's grid, solves the quoting
/// problem, and reads the platform and market-maker values at the working
/// state.
pub fn platform_value(
    tick: &TickConfig,
    params: &ModelParams,
    spec: &ValuationSpec,
) -> Result<PlatformValue> {
    let grid =
        build_grid_refined(tick, params, spec.s_ref, spec.ds, spec.margin, spec.time_refine)?;
    let need_mc = spec.method != Method::Pde;
    let need_pde = spec.method != Method::Mc;
    let opts = SolveOptions {
        store_values: false,
        value_budget_bytes: 0,
        store_policy: need_mc,
        fee_pde: need_pde,
    };
    let out = solve_with(tick, params, &grid, &opts)?;
    let h_mm = out.h0(spec.q0);

    let pde = if need_pde {
        let v = out.v0(spec.q0).expect("fee transport was integrated");
        if v < -1e-9 {
            return Err(Error::NumericalCheck(format!(
                "platform value {v} at ticks ({}, {}) is negative",
                tick.alpha_a, tick.alpha_b
            )));
        }
        let (na, nb) = out.expected_fills0(spec.q0).expect("fee transport was integrated");
        Some((v, na, nb))
    } else {
        None
    };

    let mc = if need_mc {
        let policy = out.policy.as_ref().expect("policy storage was requested");
        let sim_cfg = SimConfig {
            dt_sim: spec.dt_sim.min(out.grid.dt),
            n_paths: spec.n_paths,
            seed: spec.seed,
            s0: spec.s_ref,
            q0: spec.q0,
            s_a0: None,
            s_b0: None,
            log_paths: 0,
        };
        Some(run_paths(policy, &out.grid, params, &sim_cfg)?)
    } else {
        None
    };

    let base = PlatformValue {
        alpha_a: tick.alpha_a,
        alpha_b: tick.alpha_b,
        phi_minus: params.phi_minus,
        v: 0.0,
        v_se: 0.0,
        v_pde: None,
        h_mm,
        na_mean: 0.0,
        nb_mean: 0.0,
        n_excluded: 0,
    };
    match spec.method {
        Method::Pde => {
            let (v, na, nb) = pde.expect("pde route ran");
            Ok(PlatformValue { v, na_mean: na, nb_mean: nb, ..base })
        }
        Method::Mc => {
            let sim = mc.expect("mc route ran");
            Ok(PlatformValue {
                v: sim.rate_revenue_mean,
                v_se: sim.rate_revenue_se,
                na_mean: sim.na_mean,
                nb_mean: sim.nb_mean,
                n_excluded: sim.n_excluded,
                ..base
            })
        }
        Method::Both => {
            let (v_pde, _, _) = pde.expect("pde route ran");
            let sim = mc.expect("mc route ran");
            let gap = (sim.rate_revenue_mean - v_pde).abs();
            let slack = MC_SIGMA * sim.rate_revenue_se + 1e-12;
            if gap > slack {
                return Err(Error::NumericalCheck(format!(
                    "Monte Carlo platform value {} vs transport value {v_pde}: gap {gap:.3e} \
                     exceeds {MC_SIGMA}×SE ({:.3e}) at ticks ({}, {})",
                    sim.rate_revenue_mean, sim.rate_revenue_se, tick.alpha_a, tick.alpha_b
                )));
            }
            Ok(PlatformValue {
                v: sim.rate_revenue_mean,
                v_se: sim.rate_revenue_se,
                v_pde: Some(v_pde),
                na_mean: sim.na_mean,
                nb_mean: sim.nb_mean,
                n_excluded: sim.n_excluded,
                ..base
            })
        }
    }
}

/// A family of candidate tick values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TickSet {
    /// Arithmetic range, both ends included.
    Range {
        /// Smallest tick.
        lo: f64,
        /// Largest tick.
        hi: f64,
        /// Increment.
        step: f64,
    },
    /// All ticks in `[lo, hi]` under which the half-unit price level is a
    /// whole number of ticks (`0.5/α` integer), so the reference price
    /// lies exactly on every grid in the family.
    ReferenceAligned {
        /// Smallest tick.
        lo: f64,
        /// Largest tick.
        hi: f64,
    },
    /// Explicit values.
    List {
        /// The ticks, in scan order.
        values: Vec<f64>,
    },
}

impl TickSet {
    /// Materializes the candidate values in ascending scan order.
    pub fn values(&self) -> Vec<f64> {
        match self {
            TickSet::Range { lo, hi, step } => {
                let count = ((hi - lo) / step + 1e-9).floor().max(0.0) as usize;
                (0..=count).map(|k| lo + k as f64 * step).collect()
            }
            TickSet::ReferenceAligned { lo, hi } => {
                let n_max = (0.5 / lo + 1e-9).floor() as i64;
                let n_min = (0.5 / hi - 1e-9).ceil().max(1.0) as i64;
                (n_min..=n_max).rev().map(|n| 0.5 / n as f64).collect()
            }
            TickSet::List { values } => values.clone(),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match self {
            TickSet::Range { lo, hi, step } => *lo > 0.0 && hi >= lo && *step > 0.0,
            TickSet::ReferenceAligned { lo, hi } => *lo > 0.0 && hi >= lo,
            TickSet::List { values } => !values.is_empty() && values.iter().all(|v| *v > 0.0),
        };
        if ok && !self.values().is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(what, "tick set is empty or has non-positive entries"))
        }
    }
}

/// Scan specification: candidate ticks per side, penalty variants, and the
/// per-pair valuation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSpec {
    /// Candidate ask ticks.
    pub alpha_a: TickSet,
    /// Candidate bid ticks (ignored when `symmetric`).
    pub alpha_b: TickSet,
    /// Scan only the diagonal `α_a = α_b` of the ask set.
    pub symmetric: bool,
    /// Zone half-width at the anchor tick (drives the scaling law).
    pub eta_0: f64,
    /// Anchor tick of the scaling law.
    pub alpha_0: f64,
    /// Short-penalty rates to scan; one pass per entry.
    pub phi_minus: Vec<f64>,
    /// Per-pair valuation settings.
    pub valuation: ValuationSpec,
}

impl ScanSpec {
    fn validate(&self) -> Result<()> {
        self.alpha_a.validate("alpha_a scan set")?;
        if !self.symmetric {
            self.alpha_b.validate("alpha_b scan set")?;
        }
        if self.phi_minus.is_empty() {
            return Err(Error::invalid("phi_minus", "at least one penalty value is required"));
        }
        Ok(())
    }

    /// Candidate pairs and the ones rejected by the large-tick floor.
    fn admissible_pairs(&self) -> (Vec<(f64, f64)>, Vec<ScanRejection>) {
        let floor = large_tick_bounds(self.eta_0, self.alpha_0);
        let fuzz = 1e-12;
        let mut pairs = Vec::new();
        let mut rejected = Vec::new();
        let mut consider = |a: f64, b: f64| {
            if a < floor - fuzz || b < floor - fuzz {
                rejected.push(ScanRejection {
                    alpha_a: a,
                    alpha_b: b,
                    reason: format!(
                        "tick below the large-tick floor {floor:.6} implied by \
                         η₀ = {} at α₀ = {}",
                        self.eta_0, self.alpha_0
                    ),
                });
            } else {
                pairs.push((a, b));
            }
        };
        if self.symmetric {
            for a in self.alpha_a.values() {
                consider(a, a);
            }
        } else {
            let b_vals = self.alpha_b.values();
            for a in self.alpha_a.values() {
                for &b in &b_vals {
                    consider(a, b);
                }
            }
        }
        (pairs, rejected)
    }
}

/// One valued scan row.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanPoint {
    /// Ask tick.
    pub alpha_a: f64,
    /// Bid tick.
    pub alpha_b: f64,
    /// Short-penalty rate.
    pub phi_minus: f64,
    /// Platform value.
    pub v: f64,
    /// Its standard error (zero for the transport route).
    pub v_se: f64,
    /// Market-maker value at the working state.
    pub h_mm: f64,
    /// Expected ask executions.
    #[serde(rename = "Na_mean")]
    pub na_mean: f64,
    /// Expected bid executions.
    #[serde(rename = "Nb_mean")]
    pub nb_mean: f64,
}

/// A candidate pair the scan refused to value.
#[derive(Debug, Clone, Serialize)]
pub struct ScanRejection {
    /// Ask tick.
    pub alpha_a: f64,
    /// Bid tick.
    pub alpha_b: f64,
    /// Why it was rejected.
    pub reason: String,
}

/// Best rows of one penalty pass.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ArgmaxRecord {
    /// Penalty rate of the pass.
    pub phi_minus: f64,
    /// Row maximizing the platform value.
    pub best_v: ScanPoint,
    /// Row maximizing the market-maker value.
    pub best_h: ScanPoint,
}

/// Full scan output.
#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    /// Valued rows, ordered by penalty pass then ask then bid tick.
    pub points: Vec<ScanPoint>,
    /// Pairs rejected before valuation.
    pub rejected: Vec<ScanRejection>,
    /// Per-pass maxima.
    pub argmax: Vec<ArgmaxRecord>,
}

impl ScanResult {
    /// Rows of one penalty pass, in scan order.
    pub fn points_for(&self, phi_minus: f64) -> impl Iterator<Item = &ScanPoint> {
        self.points.iter().filter(move |p| p.phi_minus == phi_minus)
    }

    /// Maxima of one penalty pass.
    pub fn argmax_for(&self, phi_minus: f64) -> Option<&ArgmaxRecord> {
        self.argmax.iter().find(|r| r.phi_minus == phi_minus)
    }
}

/// Per-point seed so Monte Carlo draws decouple across scan points while
/// the whole scan stays reproducible from one base seed.
fn derive_seed(base: u64, pass: usize, point: usize) -> u64 {
    base.wrapping_add((pass as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((point as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Scans the tick family: values every admissible pair for every penalty
/// rate and records the per-pass maxima (ties resolve to the last row in
/// scan order).
pub fn grid_search(spec: &ScanSpec, params: &ModelParams) -> Result<ScanResult> {
    spec.validate()?;
    let (pairs, rejected) = spec.admissible_pairs();
    if pairs.is_empty() {
        return Err(Error::invalid("scan", "no admissible tick pairs to value"));
    }

    let mut points = Vec::with_capacity(pairs.len() * spec.phi_minus.len());
    for (pass, &pm) in spec.phi_minus.iter().enumerate() {
        let run = ModelParams { phi_minus: pm, ..*params };
        let pass_points = pairs
            .par_iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let tick = TickConfig::from_scaling(spec.eta_0, spec.alpha_0, a, b)?;
                let mut vspec = spec.valuation.clone();
                vspec.seed = derive_seed(spec.valuation.seed, pass, i);
                let pv = platform_value(&tick, &run, &vspec)?;
                Ok(ScanPoint {
                    alpha_a: a,
                    alpha_b: b,
                    phi_minus: pm,
                    v: pv.v,
                    v_se: pv.v_se,
                    h_mm: pv.h_mm,
                    na_mean: pv.na_mean,
                    nb_mean: pv.nb_mean,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        points.extend(pass_points);
    }

    let mut argmax = Vec::with_capacity(spec.phi_minus.len());
    for &pm in &spec.phi_minus {
        let rows: Vec<&ScanPoint> = points.iter().filter(|p| p.phi_minus == pm).collect();
        let best_v = rows
            .iter()
            .max_by(|x, y| x.v.partial_cmp(&y.v).expect("platform values are finite"))
            .expect("pass has rows");
        let best_h = rows
            .iter()
            .max_by(|x, y| x.h_mm.partial_cmp(&y.h_mm).expect("values are finite"))
            .expect("pass has rows");
        argmax.push(ArgmaxRecord { phi_minus: pm, best_v: **best_v, best_h: **best_h });
    }

    Ok(ScanResult { points, rejected, argmax })
}

/// Writes scan rows as CSV with columns
/// `alpha_a,alpha_b,phi_minus,v,v_se,h_mm,Na_mean,Nb_mean`.
pub fn write_scan_csv<W: Write>(writer: W, result: &ScanResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in &result.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the per-pass maxima as pretty JSON.
pub fn write_argmax_json<W: Write>(writer: W, result: &ScanResult) -> Result<()> {
    serde_json::to_writer_pretty(writer, &result.argmax)?;
    Ok(())
}
