//! Geometry and statistics of the model with uncertainty zones.
//!
//! Traded prices live on a one-sided tick grid `{k·α}`. Around every
//! mid-tick value `(k + 1/2)·α` sits an *uncertainty zone*
//!
//! ```text
//!     ( (k + 1/2 − η)·α ,  (k + 1/2 + η)·α )
//! ```
//!
//! of width `2·η·α`, with `η ∈ [0, 1/2]` (the large-tick regime). The
//! tradable *fair price* on that side stays put while the efficient price
//! `S` wanders inside the current zone band and jumps one tick exactly when
//! `S` exits `±(1/2 + η)·α` around it.
//!
//! This module provides:
//!
//! * the zone geometry (bounds, branch validity, fair-price update),
//! * the efficient-price reconstruction from one-tick traded-price changes,
//! * the `η` estimator from alternation/continuation counts,
//! * CSV ingestion of transaction data and emission of estimator reports.
//!
//! All operations are pure functions; everything here is safe to call from
//! any number of threads.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerances::GRID_MEMBERSHIP_REL;

// ---------------------------------------------------------------------------
// Sides and tick configuration
// ---------------------------------------------------------------------------

/// Book side. The ask side sells (inventory decreases on a fill), the bid
/// side buys (inventory increases on a fill).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[serde(alias = "a")]
    Ask,
    #[serde(alias = "b")]
    Bid,
}

impl Side {
    /// Sign convention used in inventory cutoffs: +1 for ask, −1 for bid.
    /// The maker may quote side `i` only while `sign(i)·Q > −q_max`.
    pub fn sign(self) -> i32 {
        match self {
            Side::Ask => 1,
            Side::Bid => -1,
        }
    }

    /// One-letter tag used in CSV files (`a` / `b`).
    pub fn letter(self) -> &'static str {
        match self {
            Side::Ask => "a",
            Side::Bid => "b",
        }
    }

    pub const BOTH: [Side; 2] = [Side::Ask, Side::Bid];
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.letter())
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "a" | "ask" | "A" => Ok(Side::Ask),
            "b" | "bid" | "B" => Ok(Side::Bid),
            other => Err(Error::invalid("side", format!("expected 'a' or 'b', got {other:?}"))),
        }
    }
}

/// Tick sizes and zone half-widths for both sides, together with the
/// reference pair `(η₀, α₀)` that defines the scaling rule
/// `η(α) = η₀·sqrt(α₀/α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickConfig {
    /// Ask tick size (price units, > 0).
    pub alpha_a: f64,
    /// Bid tick size (price units, > 0).
    pub alpha_b: f64,
    /// Ask zone half-width parameter, in [0, 1/2].
    pub eta_a: f64,
    /// Bid zone half-width parameter, in [0, 1/2].
    pub eta_b: f64,
    /// Reference zone parameter the scaling rule is anchored to.
    pub eta_0: f64,
    /// Reference tick size the scaling rule is anchored to.
    pub alpha_0: f64,
}

impl TickConfig {
    /// Builds a configuration from the scaling rule: each side's `η` is
    /// derived from its tick via `eta_for_tick`.
    ///
    /// Fails if a derived `η` leaves `[0, 1/2]` (the asset would no longer
    /// be large-tick); see `large_tick_floor` for the smallest admissible
    /// tick.
    pub fn from_scaling(eta_0: f64, alpha_0: f64, alpha_a: f64, alpha_b: f64) -> Result<Self> {
        let eta_a = eta_for_tick(eta_0, alpha_0, alpha_a)?;
        let eta_b = eta_for_tick(eta_0, alpha_0, alpha_b)?;
        let cfg = TickConfig { alpha_a, alpha_b, eta_a, eta_b, eta_0, alpha_0 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a configuration with explicitly chosen zone parameters
    /// (bypassing the scaling rule). The reference pair is still recorded.
    pub fn explicit(
        alpha_a: f64,
        alpha_b: f64,
        eta_a: f64,
        eta_b: f64,
        eta_0: f64,
        alpha_0: f64,
    ) -> Result<Self> {
        let cfg = TickConfig { alpha_a, alpha_b, eta_a, eta_b, eta_0, alpha_0 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the large-tick invariants.
    pub fn validate(&self) -> Result<()> {
        for (name, alpha) in [("alpha_a", self.alpha_a), ("alpha_b", self.alpha_b)] {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::invalid(name, format!("tick must be positive, got {alpha}")));
            }
        }
        for (name, eta) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(0.0..=0.5).contains(&eta) {
                return Err(Error::invalid(
                    name,
                    format!("zone parameter must lie in [0, 1/2], got {eta}"),
                ));
            }
        }
        Ok(())
    }

    /// Tick size of one side.
    pub fn alpha(&self, side: Side) -> f64 {
        match side {
            Side::Ask => self.alpha_a,
            Side::Bid => self.alpha_b,
        }
    }

    /// Zone parameter of one side.
    pub fn eta(&self, side: Side) -> f64 {
        match side {
            Side::Ask => self.eta_a,
            Side::Bid => self.eta_b,
        }
    }
}

// ---------------------------------------------------------------------------
// Zone geometry
// ---------------------------------------------------------------------------

/// New zone parameter after a change of tick size: `η₀·sqrt(α₀/α)`.
///
/// No clamping is applied; callers check the large-tick constraint
/// (`result ≤ 1/2`) themselves, e.g. via [`crate::exchange::large_tick_bounds`].
///
/// # Examples
///
/// ```
/// use tickopt_core::zones::eta_for_tick;
/// assert_eq!(eta_for_tick(0.3, 0.01, 0.01).unwrap(), 0.3);   // identity
/// assert_eq!(eta_for_tick(0.3, 0.01, 0.04).unwrap(), 0.15);  // sqrt(1/4) = 1/2
/// ```
pub fn eta_for_tick(eta_0: f64, alpha_0: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", format!("tick must be positive, got {alpha}")));
    }
    if !(alpha_0 > 0.0) {
        return Err(Error::invalid("alpha_0", format!("reference tick must be positive, got {alpha_0}")));
    }
    if !(0.0..=0.5).contains(&eta_0) {
        return Err(Error::invalid("eta_0", format!("must lie in [0, 1/2], got {eta_0}")));
    }
    Ok(eta_0 * (alpha_0 / alpha).sqrt())
}

/// Bounds of the uncertainty zone around the mid-tick `(k + 1/2)·α`:
/// `((k + 1/2 − η)·α, (k + 1/2 + η)·α)`. The width is exactly `2·η·α`.
pub fn zone_bounds(k: i64, alpha: f64, eta: f64) -> (f64, f64) {
    debug_assert!((0.0..=0.5).contains(&eta), "eta out of [0, 1/2]");
    let mid = k as f64 + 0.5;
    ((mid - eta) * alpha, (mid + eta) * alpha)
}

/// Nearest grid index to a price: `round(price / alpha)`.
pub fn grid_index(price: f64, alpha: f64) -> i64 {
    (price / alpha).round() as i64
}

/// Checks that a price sits on the `{k·α}` grid within the relative
/// membership tolerance, returning its index.
pub fn require_on_grid(price: f64, alpha: f64) -> Result<i64> {
    let idx = grid_index(price, alpha);
    let offset = (price - idx as f64 * alpha).abs();
    if offset > GRID_MEMBERSHIP_REL * alpha {
        return Err(Error::OffGrid { price, alpha, offset });
    }
    Ok(idx)
}

/// One-tick fair-price update rule, iterated until admissible.
///
/// Starting from `prev_fair = i·α`, the fair price jumps up one tick when
/// `S − prev_fair > (1/2 + η)·α`, down one tick when
/// `S − prev_fair < −(1/2 + η)·α`, and stays put otherwise. The update is
/// applied repeatedly until `|S − fair| ≤ (1/2 + η)·α`, which guards against
/// multi-tick overshoot when the caller advances `S` in coarse steps (the
/// continuous-path model only ever needs a single application).
///
/// # Errors
///
/// `prev_fair` must be a grid multiple of `alpha` (within the membership
/// tolerance); anything else is a domain error.
pub fn fair_price_update(prev_fair: f64, s: f64, alpha: f64, eta: f64) -> Result<f64> {
    let idx = require_on_grid(prev_fair, alpha)?;
    let idx = fair_index_update(idx, s, alpha, eta);
    Ok(idx as f64 * alpha)
}

/// Index-space version of [`fair_price_update`]: maps the previous fair
/// index to the updated one. Exact (no floating-point drift on the fair
/// price itself), which is what the simulator uses internally.
pub fn fair_index_update(prev_idx: i64, s: f64, alpha: f64, eta: f64) -> i64 {
    let threshold = (0.5 + eta) * alpha;
    let mut idx = prev_idx;
    while s - idx as f64 * alpha > threshold {
        idx += 1;
    }
    while s - idx as f64 * alpha < -threshold {
        idx -= 1;
    }
    idx
}

/// The set of admissible fair-price grid indices ("worlds") at an efficient
/// price `S`: all integers `i` with `|S − i·α| < (1/2 + η)·α`.
///
/// * Outside every zone exactly one index is admissible.
/// * Strictly inside a zone two consecutive indices are admissible
///   (`lo` and `hi = lo + 1`).
/// * Exactly on a zone edge (within the membership tolerance) only the
///   index for which `S` is strictly interior remains — the post-jump
///   world — and the `on_boundary` flag is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchSet {
    /// Smallest admissible index.
    pub lo: i64,
    /// Largest admissible index (`lo` or `lo + 1`).
    pub hi: i64,
    /// True when `S` sits on a zone edge within tolerance.
    pub on_boundary: bool,
}

impl BranchSet {
    /// Number of admissible worlds (1 or 2).
    pub fn len(&self) -> usize {
        if self.hi > self.lo {
            2
        } else {
            1
        }
    }

    pub fn is_empty(&self) -> bool {
        false // at least one world is always admissible
    }

    /// Iterates the admissible indices in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = i64> {
        (self.lo..=self.hi).step_by(1)
    }

    pub fn contains(&self, idx: i64) -> bool {
        idx >= self.lo && idx <= self.hi
    }
}

/// Computes the [`BranchSet`] at `S` for a side with tick `alpha` and zone
/// parameter `eta`. See the type docs for the boundary convention.
pub fn valid_branches(s: f64, alpha: f64, eta: f64) -> BranchSet {
    debug_assert!(alpha > 0.0);
    let x = s / alpha; // work in tick units; membership tolerance becomes absolute
    let half_width = 0.5 + eta;
    let tol = GRID_MEMBERSHIP_REL;

    let i0 = x.floor() as i64;
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    let mut on_boundary = false;
    for i in [i0 - 1, i0, i0 + 1] {
        let d = (x - i as f64).abs();
        if d < half_width - tol {
            lo = lo.min(i);
            hi = hi.max(i);
        } else if d <= half_width + tol {
            // On the edge: this world is *not* admissible (the open-interval
            // rule assigns the point to the post-jump world), but we flag
            // the membership.
            on_boundary = true;
        }
    }
    debug_assert!(lo <= hi, "no admissible world at s = {s}, alpha = {alpha}");
    debug_assert!(hi - lo <= 1, "more than two admissible worlds");
    BranchSet { lo, hi, on_boundary }
}

/// Recovers the efficient price from a one-tick traded-price change:
/// `S = p_now − α·(1/2 − η)·sign(p_now − p_prev)`.
///
/// This is the exact inverse of the crossing rule: at the instant of an
/// upward change the efficient price sits on the upper edge of the crossed
/// zone, i.e. `p_now − (1/2 − η)·α`; symmetrically downward.
///
/// # Errors
///
/// Both prices must be on the `alpha` grid and differ by exactly one tick;
/// anything else violates the one-tick model and is a domain error.
pub fn reconstruct_efficient_price(p_now: f64, p_prev: f64, alpha: f64, eta: f64) -> Result<f64> {
    let i_now = require_on_grid(p_now, alpha)?;
    let i_prev = require_on_grid(p_prev, alpha)?;
    let dp = i_now - i_prev;
    if dp.abs() != 1 {
        return Err(Error::NotOneTick { prev: p_prev, now: p_now, alpha });
    }
    Ok(p_now - alpha * (0.5 - eta) * dp as f64)
}

// ---------------------------------------------------------------------------
// Price-change series and the η estimator
// ---------------------------------------------------------------------------

/// One traded-price change: the transaction that moved the price of its side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceChange {
    /// Event time in seconds.
    pub time: f64,
    /// Traded price after the change (on its side's grid).
    pub price: f64,
    /// Book side the transaction hit.
    pub side: Side,
}

/// Per-side sequence of traded-price changes, plus bookkeeping from
/// ingestion (rows skipped for violating the one-tick rule).
///
/// The invariant maintained by construction: within each side, consecutive
/// retained prices differ by exactly one tick of that side. The reference
/// price seen *before* the first retained change is kept so that every
/// change — including the first — has a well-defined direction.
#[derive(Debug, Clone, Default)]
pub struct PriceChangeSeries {
    /// Retained price-change events, time-ordered, both sides interleaved.
    pub events: Vec<PriceChange>,
    /// Per-side price observed before the first change (`[ask, bid]`);
    /// `None` when that side was never observed.
    pub initial_price: [Option<f64>; 2],
    /// Input rows dropped because a same-side price change exceeded one
    /// tick (the model cannot produce them; real data sometimes does).
    pub skipped_multi_tick: usize,
}

fn side_slot(side: Side) -> usize {
    match side {
        Side::Ask => 0,
        Side::Bid => 1,
    }
}

impl PriceChangeSeries {
    /// Extracts price changes from raw transactions.
    ///
    /// Transactions are run-length filtered per side: a row enters the
    /// series only if its price differs from the previous *retained* price
    /// on the same side by exactly one tick. The first row of each side
    /// sets that side's reference price and is not itself a change. Rows
    /// whose change exceeds one tick (or is not a whole number of ticks)
    /// are counted in `skipped_multi_tick` and dropped; the previous
    /// retained price stays the reference.
    pub fn from_transactions(rows: &[PriceChange], cfg: &TickConfig) -> Self {
        let mut series = PriceChangeSeries::default();
        let mut last: [Option<f64>; 2] = [None, None];
        for row in rows {
            let k = side_slot(row.side);
            let alpha = cfg.alpha(row.side);
            match last[k] {
                None => {
                    last[k] = Some(row.price);
                    series.initial_price[k] = Some(row.price);
                }
                Some(prev) => {
                    let dp = (row.price - prev) / alpha;
                    let ticks = dp.round();
                    if (dp - ticks).abs() > GRID_MEMBERSHIP_REL * 2.0 {
                        series.skipped_multi_tick += 1;
                        continue;
                    }
                    match ticks.abs() as i64 {
                        0 => {} // same price: not a change
                        1 => {
                            series.events.push(*row);
                            last[k] = Some(row.price);
                        }
                        _ => {
                            series.skipped_multi_tick += 1;
                        }
                    }
                }
            }
        }
        series
    }

    /// Direction (+1 / −1) of each retained change on one side, in order.
    /// When the pre-series reference is unknown, the first event only
    /// anchors directions from the second change on.
    pub fn directions(&self, side: Side) -> Vec<i8> {
        let mut prev = self.initial_price[side_slot(side)];
        let mut dirs = Vec::new();
        for ev in self.events.iter().filter(|e| e.side == side) {
            if let Some(p) = prev {
                dirs.push(if ev.price > p { 1 } else { -1 });
            }
            prev = Some(ev.price);
        }
        dirs
    }

    /// Number of retained changes on one side.
    pub fn n_changes(&self, side: Side) -> usize {
        self.events.iter().filter(|e| e.side == side).count()
    }
}

/// Counts alternations and continuations among consecutive pairs of price
/// changes on one side: opposite directions increment `n_alt`, same
/// directions increment `n_cont`.
///
/// Fewer than two changes yield `(0, 0)` — an empty result, not an error.
pub fn count_alternations_continuations(series: &PriceChangeSeries, side: Side) -> (u64, u64) {
    let dirs = series.directions(side);
    count_from_directions(&dirs)
}

/// Core pair-counting on a direction sequence (+1/−1 per change).
pub fn count_from_directions(dirs: &[i8]) -> (u64, u64) {
    let mut n_alt = 0;
    let mut n_cont = 0;
    for pair in dirs.windows(2) {
        if pair[0] == pair[1] {
            n_cont += 1;
        } else {
            n_alt += 1;
        }
    }
    (n_alt, n_cont)
}

/// Zone-parameter estimator `η̂ = N_cont / (2·N_alt)`.
///
/// Returns `None` when `n_alt = 0` (the estimate is undefined, which the
/// caller reports rather than fabricating a value).
pub fn estimate_eta(n_cont: u64, n_alt: u64) -> Option<f64> {
    if n_alt == 0 {
        return None;
    }
    Some(n_cont as f64 / (2.0 * n_alt as f64))
}

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct TransactionRow {
    time: f64,
    price: f64,
    side: String,
}

/// Reads a transaction CSV with header `time,price,side` (side ∈ {a, b}).
pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<PriceChange>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: TransactionRow = rec?;
        rows.push(PriceChange { time: row.time, price: row.price, side: row.side.parse()? });
    }
    Ok(rows)
}

/// Reads a transaction CSV from a file path.
pub fn read_transactions_path(path: &Path) -> Result<Vec<PriceChange>> {
    read_transactions(std::fs::File::open(path)?)
}

/// One estimator report row, as emitted by the `estimate-eta` command.
#[derive(Debug, Clone, Serialize)]
pub struct EtaReportRow {
    pub side: String,
    pub alpha: f64,
    /// Empty when the estimate is undefined (no alternations observed).
    pub eta_hat: Option<f64>,
    pub n_alt: u64,
    pub n_cont: u64,
}

/// Runs the estimator on both sides of a series and assembles report rows.
pub fn eta_report(series: &PriceChangeSeries, cfg: &TickConfig) -> Vec<EtaReportRow> {
    Side::BOTH
        .iter()
        .map(|&side| {
            let (n_alt, n_cont) = count_alternations_continuations(series, side);
            EtaReportRow {
                side: side.letter().to_string(),
                alpha: cfg.alpha(side),
                eta_hat: estimate_eta(n_cont, n_alt),
                n_alt,
                n_cont,
            }
        })
        .collect()
}

/// Writes estimator report rows as CSV with header
/// `side,alpha,eta_hat,n_alt,n_cont`.
pub fn write_eta_report<W: Write>(writer: W, rows: &[EtaReportRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes a price-change log as a transaction CSV (`time,price,side`),
/// re-ingestible by [`read_transactions`].
pub fn write_price_changes<W: Write>(writer: W, events: &[PriceChange]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["time", "price", "side"])?;
    for ev in events {
        wtr.write_record(&[
            format!("{}", ev.time),
            format!("{}", ev.price),
            ev.side.letter().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_cfg() -> TickConfig {
        TickConfig::from_scaling(0.3, 0.01, 0.01, 0.01).unwrap()
    }

    #[test]
    fn eta_scaling_identity_and_forced_values() {
        assert_eq!(eta_for_tick(0.3, 0.01, 0.01).unwrap(), 0.3);
        assert_eq!(eta_for_tick(0.3, 0.01, 0.04).unwrap(), 0.15);
        // Boundary of the large-tick regime: alpha = alpha_0·(eta_0/0.5)^2.
        assert_relative_eq!(eta_for_tick(0.3, 0.01, 0.0036).unwrap(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn eta_scaling_rejects_nonpositive_ticks() {
        assert!(eta_for_tick(0.3, 0.01, 0.0).is_err());
        assert!(eta_for_tick(0.3, 0.01, -0.01).is_err());
        assert!(eta_for_tick(0.3, 0.0, 0.01).is_err());
    }

    #[test]
    fn zone_bounds_direct_evaluation() {
        let (lo, hi) = zone_bounds(0, 0.01, 0.3);
        assert_relative_eq!(lo, 0.002, max_relative = 1e-12);
        assert_relative_eq!(hi, 0.008, max_relative = 1e-12);

        // Near the standard working price 10.5: zone 1050 spans
        // (1050.2·0.01, 1050.8·0.01) = (10.502, 10.508).
        let (lo, hi) = zone_bounds(1050, 0.01, 0.3);
        assert_relative_eq!(lo, 10.502, max_relative = 1e-12);
        assert_relative_eq!(hi, 10.508, max_relative = 1e-12);
    }

    #[test]
    fn zone_bounds_degenerate_at_eta_zero() {
        let (lo, hi) = zone_bounds(7, 0.01, 0.0);
        assert_eq!(lo, hi);
        assert_relative_eq!(lo, 0.075, max_relative = 1e-12);
    }

    #[test]
    fn zone_width_is_two_eta_alpha() {
        for k in [-3i64, 0, 11, 1050] {
            for eta in [0.0, 0.1, 0.3, 0.5] {
                let (lo, hi) = zone_bounds(k, 0.01, eta);
                // The edges are O(k·α) while the width is O(α), so the
                // difference cancels ~k digits; tolerate that round-off.
                assert_relative_eq!(hi - lo, 2.0 * eta * 0.01, epsilon = 1e-15 * k.abs().max(1) as f64 * 10.0);
            }
        }
    }

    #[test]
    fn fair_price_update_cases() {
        // 0.009 above the fair price exceeds (1/2 + 0.3)·0.01 = 0.008: jump up.
        assert_relative_eq!(
            fair_price_update(10.50, 10.509, 0.01, 0.3).unwrap(),
            10.51,
            max_relative = 1e-12
        );
        // Inside the band: no change.
        assert_relative_eq!(
            fair_price_update(10.50, 10.507, 0.01, 0.3).unwrap(),
            10.50,
            max_relative = 1e-12
        );
        // Symmetric downward case.
        assert_relative_eq!(
            fair_price_update(10.50, 10.491, 0.01, 0.3).unwrap(),
            10.49,
            max_relative = 1e-12
        );
    }

    #[test]
    fn fair_price_update_iterates_on_overshoot() {
        // A jump of several ticks in one step must land back inside the band.
        let fair = fair_price_update(10.50, 10.547, 0.01, 0.3).unwrap();
        assert_relative_eq!(fair, 10.54, max_relative = 1e-12);
        assert!((10.547 - fair).abs() <= (0.5 + 0.3) * 0.01 + 1e-12);
    }

    #[test]
    fn fair_price_update_rejects_off_grid_input() {
        let err = fair_price_update(10.5001, 10.509, 0.01, 0.3).unwrap_err();
        assert!(matches!(err, Error::OffGrid { .. }), "expected off-grid error, got {err}");
    }

    #[test]
    fn fair_price_update_monotone_in_s() {
        let mut prev = f64::NEG_INFINITY;
        let mut s = 10.40;
        while s < 10.60 {
            let fair = fair_price_update(10.50, s, 0.01, 0.3).unwrap();
            assert!(fair >= prev, "fair price update must be nondecreasing in S");
            prev = fair;
            s += 1.3e-4;
        }
    }

    #[test]
    fn valid_branches_on_grid_point_single_world() {
        let b = valid_branches(10.500, 0.01, 0.3);
        assert_eq!((b.lo, b.hi), (1050, 1050));
        assert!(!b.on_boundary);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn valid_branches_zone_midpoint_two_worlds() {
        let b = valid_branches(10.505, 0.01, 0.3);
        assert_eq!((b.lo, b.hi), (1050, 1051));
        assert_eq!(b.len(), 2);
        assert!(!b.on_boundary);
    }

    #[test]
    fn valid_branches_zone_edge_post_jump_world_only() {
        // 10.513 is the upper edge of zone 1050's exit band for index 1050:
        // 10.513 − 10.50 = 0.013 = (1/2 + 0.3)·0.01 + 0.005... recompute:
        // world 1050 admissible iff |S − 10.50| < 0.008 + ... (1/2+η)α = 0.008.
        // upper zone bound of zone_bounds(1050) is 10.508; the *world exit*
        // happens at 10.50 + 0.008 = 10.508 too. Use it directly.
        let b = valid_branches(10.508, 0.01, 0.3);
        assert_eq!((b.lo, b.hi), (1051, 1051), "only the post-jump world remains on the edge");
        assert!(b.on_boundary);
    }

    #[test]
    fn valid_branches_two_worlds_iff_strictly_inside_a_zone() {
        let alpha = 0.01;
        let eta = 0.3;
        let mut s = 10.40;
        while s < 10.60 {
            let b = valid_branches(s, alpha, eta);
            let x = s / alpha;
            let frac = x - x.floor();
            let strictly_inside = frac > 0.5 - eta + 1e-9 && frac < 0.5 + eta - 1e-9;
            if strictly_inside {
                assert_eq!(b.len(), 2, "expected two worlds strictly inside a zone at S = {s}");
            }
            if b.len() == 2 {
                assert!(
                    frac > 0.5 - eta - 1e-9 && frac < 0.5 + eta + 1e-9,
                    "two worlds outside any zone at S = {s}"
                );
            }
            s += 3.7e-4;
        }
    }

    #[test]
    fn reconstruction_upward_and_downward() {
        assert_relative_eq!(
            reconstruct_efficient_price(10.51, 10.50, 0.01, 0.3).unwrap(),
            10.508,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            reconstruct_efficient_price(10.50, 10.51, 0.01, 0.3).unwrap(),
            10.502,
            max_relative = 1e-12
        );
    }

    #[test]
    fn reconstruction_rejects_multi_tick_changes() {
        let err = reconstruct_efficient_price(10.52, 10.50, 0.01, 0.3).unwrap_err();
        assert!(matches!(err, Error::NotOneTick { .. }));
    }

    #[test]
    fn reconstruction_lands_on_crossed_zone_edge() {
        // Upward change onto p_now = (i+1)·α crosses the upper bound of
        // zone i; the reconstruction must equal that bound exactly.
        let (_, hi) = zone_bounds(1050, 0.01, 0.3);
        let rec = reconstruct_efficient_price(10.51, 10.50, 0.01, 0.3).unwrap();
        assert_relative_eq!(rec, hi, max_relative = 1e-12);
    }

    #[test]
    fn counting_pure_alternation_and_continuation() {
        assert_eq!(count_from_directions(&[1, -1, 1]), (2, 0));
        assert_eq!(count_from_directions(&[1, 1, 1]), (0, 2));
        // Four consecutive pairs: (+,+)=cont, (+,−)=alt, (−,−)=cont, (−,+)=alt.
        assert_eq!(count_from_directions(&[1, 1, -1, -1, 1]), (2, 2));
    }

    #[test]
    fn counting_short_series_is_empty_not_an_error() {
        assert_eq!(count_from_directions(&[1]), (0, 0));
        assert_eq!(count_from_directions(&[]), (0, 0));
    }

    #[test]
    fn estimator_direct_values() {
        assert_eq!(estimate_eta(3, 5), Some(0.3));
        assert_eq!(estimate_eta(0, 7), Some(0.0));
        assert_eq!(estimate_eta(4, 0), None, "no alternations → undefined estimate");
    }

    #[test]
    fn series_ingestion_filters_and_counts() {
        let cfg = base_cfg();
        let rows = vec![
            PriceChange { time: 0.0, price: 10.50, side: Side::Ask },
            PriceChange { time: 1.0, price: 10.50, side: Side::Ask }, // no change
            PriceChange { time: 2.0, price: 10.51, side: Side::Ask }, // +1
            PriceChange { time: 3.0, price: 10.53, side: Side::Ask }, // multi-tick: skipped
            PriceChange { time: 4.0, price: 10.52, side: Side::Ask }, // +1 vs retained 10.51
            PriceChange { time: 5.0, price: 10.51, side: Side::Ask }, // −1
            PriceChange { time: 6.0, price: 10.49, side: Side::Bid }, // first bid obs
            PriceChange { time: 7.0, price: 10.48, side: Side::Bid }, // −1
        ];
        let series = PriceChangeSeries::from_transactions(&rows, &cfg);
        assert_eq!(series.skipped_multi_tick, 1);
        assert_eq!(series.n_changes(Side::Ask), 3);
        assert_eq!(series.n_changes(Side::Bid), 1);
        assert_eq!(series.directions(Side::Ask), vec![1, 1, -1]);

        let (n_alt, n_cont) = count_alternations_continuations(&series, Side::Ask);
        // Ask directions: +1, +1, −1 → pairs (cont, alt).
        assert_eq!((n_alt, n_cont), (1, 1));
    }

    #[test]
    fn csv_round_trip() {
        let csv_text = "time,price,side\n0.5,10.50,a\n1.5,10.51,a\n2.0,10.49,b\n";
        let rows = read_transactions(csv_text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].side, Side::Ask);
        assert_eq!(rows[2].side, Side::Bid);

        let mut out = Vec::new();
        write_price_changes(&mut out, &rows).unwrap();
        let again = read_transactions(out.as_slice()).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn eta_report_rows_cover_both_sides() {
        let cfg = base_cfg();
        let rows = vec![
            PriceChange { time: 0.0, price: 10.50, side: Side::Ask },
            PriceChange { time: 1.0, price: 10.51, side: Side::Ask },
            PriceChange { time: 2.0, price: 10.52, side: Side::Ask },
            PriceChange { time: 3.0, price: 10.51, side: Side::Ask },
        ];
        let series = PriceChangeSeries::from_transactions(&rows, &cfg);
        let report = eta_report(&series, &cfg);
        assert_eq!(report.len(), 2);
        assert_eq!(report[0].side, "a");
        assert_eq!((report[0].n_alt, report[0].n_cont), (1, 1));
        assert_eq!(report[0].eta_hat, Some(0.5));
        // Bid side saw no changes: undefined estimate, zero counts.
        assert_eq!(report[1].eta_hat, None);
        assert_eq!((report[1].n_alt, report[1].n_cont), (0, 0));

        let mut buf = Vec::new();
        write_eta_report(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("side,alpha,eta_hat,n_alt,n_cont"));
        assert!(text.contains("a,0.01,0.5,1,1"));
        assert!(text.contains("b,0.01,,0,0"), "undefined estimate must serialize as empty:\n{text}");
    }
}
