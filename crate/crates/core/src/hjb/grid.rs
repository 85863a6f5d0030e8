//! State grid: non-uniform price mesh, branch validity, stability bound.
//!
//! # Mesh
//!
//! The price mesh covers `[S_ref − W, S_ref + W]` with
//! `W = margin·σ·√T + 2·max(α^a, α^b)` and is built from a uniform base
//! mesh of width `ΔS` *plus every uncertainty-zone edge of both sides* in
//! range, so the continuity couplings at zone crossings land exactly on
//! nodes. Exactly coincident edges (symmetric configurations) are merged
//! at 1e-12.
//!
//! When the two sides' grids are incommensurate, distinct edges can fall
//! arbitrarily close together. The explicit scheme's time step obeys
//! `Δt ≤ ½·min(h₋·h₊)/σ²`, so two nodes a distance ε apart would force
//! `Δt = O(ε·ΔS)` — unbounded work for a vanishing accuracy gain. Special
//! points closer than `SNAP_FRACTION·ΔS` are therefore merged into a
//! single node (midpoint, with the reference price and the domain ends
//! taking priority). The displaced coupling location is off by at most
//! `SNAP_FRACTION·ΔS`, which vanishes under refinement; every cell stays
//! at least `SNAP_FRACTION·ΔS` wide.
//!
//! # Branches
//!
//! Each node records, per side, the admissible fair-price indices
//! (`lo`/`hi` worlds). Value and policy arrays carry 2×2 branch slots per
//! node; at single-world nodes both slots of that side hold the same
//! value, which *is* the continuity coupling: the pre-jump world's slot is
//! canonicalized to the post-jump world's value.

use crate::error::{Error, Result};
use crate::tolerances::{
    CFL_SAFETY, GRID_MEMBERSHIP_REL, INTENSITY_WEIGHT_CAP, NODE_MERGE_ABS, SNAP_FRACTION,
};
use crate::zones::{valid_branches, Side, TickConfig};

use super::ModelParams;

/// Guard against configurations whose stability bound would demand an
/// absurd number of time steps.
const MAX_TIME_STEPS: usize = 2_000_000;

/// Admissible fair-price worlds of one side at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SideWorlds {
    /// Smallest admissible fair-price index.
    pub lo: i64,
    /// Largest admissible index; `hi = lo` (one world) or `lo + 1` (two).
    pub hi: i64,
    /// Node sits on a zone edge of this side (within tolerance).
    pub on_boundary: bool,
}

impl SideWorlds {
    /// Number of admissible worlds (1 or 2).
    pub fn n(&self) -> usize {
        (self.hi - self.lo) as usize + 1
    }

    /// Fair-price index of a branch slot (slot 0 → `lo`, slot 1 → `hi`).
    pub fn world(&self, slot: usize) -> i64 {
        if slot == 0 {
            self.lo
        } else {
            self.hi
        }
    }

    /// Branch slot at *this* node whose stored value continues world `w`
    /// (by the zone-crossing continuity rule when `w` is not admissible
    /// here). `w < lo` continues into `lo` (jump up, slot 0); `w > hi`
    /// continues into `hi` (jump down, slot 1).
    pub fn resolve(&self, w: i64) -> usize {
        usize::from(w >= self.hi && self.hi > self.lo) | usize::from(w > self.hi)
    }
}

/// Discretized state space: price nodes with branch bookkeeping, the time
/// step, and the inventory range `q ∈ {−q_max, …, q_max}`.
#[derive(Debug, Clone)]
pub struct StateGrid {
    /// Strictly increasing price nodes.
    pub s: Vec<f64>,
    /// Uniform time step; `horizon = dt · n_steps` exactly up to round-off.
    pub dt: f64,
    /// Number of backward steps (time nodes are `0..=n_steps`).
    pub n_steps: usize,
    /// Inventory bound (levels `−q_max ..= q_max`).
    pub q_max: i32,
    /// Ask-side worlds per node.
    pub ask: Vec<SideWorlds>,
    /// Bid-side worlds per node.
    pub bid: Vec<SideWorlds>,
    /// Diffusion weight to the left neighbor: `σ²·Δt / (h₋·(h₋+h₊))`;
    /// zero at the two outer nodes (zero-second-derivative closure).
    pub p_minus: Vec<f64>,
    /// Diffusion weight to the right neighbor.
    pub p_plus: Vec<f64>,
    /// Reference price (always an exact node).
    pub s_ref: f64,
    /// Node index of `s_ref`.
    pub s_ref_idx: usize,
    /// Tick configuration the mesh was built for.
    pub tick: TickConfig,
    /// Number of special points displaced by snap-merging.
    pub snapped_specials: usize,
    /// Largest displacement applied to any special point.
    pub max_snap_offset: f64,
}

impl StateGrid {
    pub fn n_nodes(&self) -> usize {
        self.s.len()
    }

    /// Number of inventory levels, `2·q_max + 1`.
    pub fn nq(&self) -> usize {
        (2 * self.q_max + 1) as usize
    }

    /// Length of one time slice of a value array (node × 2 × 2 × nq).
    pub fn slice_len(&self) -> usize {
        self.n_nodes() * 4 * self.nq()
    }

    /// Flat index into a time slice.
    #[inline(always)]
    pub fn idx(&self, node: usize, ba: usize, bb: usize, qi: usize) -> usize {
        ((node * 2 + ba) * 2 + bb) * self.nq() + qi
    }

    /// Inventory level → slice coordinate.
    #[inline(always)]
    pub fn q_index(&self, q: i32) -> usize {
        (q + self.q_max) as usize
    }

    /// Worlds of one side at one node.
    pub fn worlds(&self, side: Side, node: usize) -> SideWorlds {
        match side {
            Side::Ask => self.ask[node],
            Side::Bid => self.bid[node],
        }
    }

    /// Index of the node nearest to `s` (ties resolve to the left node).
    pub fn nearest_node(&self, s: f64) -> usize {
        match self.s.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.s.len() => self.s.len() - 1,
            Err(i) => {
                if s - self.s[i - 1] <= self.s[i] - s {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// True when `s` lies inside the meshed domain.
    pub fn contains(&self, s: f64) -> bool {
        s >= self.s[0] && s <= self.s[self.s.len() - 1]
    }

    /// Node used for control lookups at a concrete market state: the node
    /// nearest to `s` at which both current fair-price worlds are still
    /// representable.
    ///
    /// Within half a cell of a zone edge the plain nearest node may have
    /// already committed to the post-crossing world. Resolving the true
    /// world against that node silently substitutes a fair price a full
    /// tick away, so quotes would be priced off a state the optimizer
    /// never saw — a first-order lookup error concentrated exactly where
    /// the branch structure matters. Preferring a world-compatible
    /// neighbor keeps the quote-relevant state exact at an `O(ΔS)` price
    /// offset instead.
    pub fn policy_node(&self, s: f64, world_a: i64, world_b: i64) -> usize {
        self.policy_node_at(self.nearest_node(s), s, world_a, world_b)
    }

    /// [`Self::policy_node`] warm-started from the caller's previous node
    /// index. A diffusion step moves the price a fraction of a cell, so
    /// walking from the hint replaces the binary search; hints further than
    /// a few cells away fall back to it. Returns the lookup node together
    /// with the refreshed hint (the plain nearest node). Results match
    /// `policy_node` exactly for any hint.
    #[inline]
    pub fn policy_node_hinted(&self, s: f64, world_a: i64, world_b: i64, hint: usize) -> (usize, usize) {
        let i = self.nearest_node_from(s, hint);
        (self.policy_node_at(i, s, world_a, world_b), i)
    }

    #[inline]
    fn policy_node_at(&self, i: usize, s: f64, world_a: i64, world_b: i64) -> usize {
        let admits = |j: usize| {
            u8::from(world_a >= self.ask[j].lo && world_a <= self.ask[j].hi)
                + u8::from(world_b >= self.bid[j].lo && world_b <= self.bid[j].hi)
        };
        if admits(i) == 2 {
            return i;
        }
        // Mismatch bands are at most one cell wide per side, so a short
        // scan suffices; prefer more matched worlds, then proximity.
        let lo = i.saturating_sub(3);
        let hi = (i + 3).min(self.s.len() - 1);
        let mut best = i;
        let mut best_key = (admits(i), -(self.s[i] - s).abs());
        for j in lo..=hi {
            let key = (admits(j), -(self.s[j] - s).abs());
            if key > best_key {
                best = j;
                best_key = key;
            }
        }
        best
    }

    /// Nearest node to `s`, walking from `hint`; agrees with
    /// [`Self::nearest_node`] (ties resolve to the left node) for every
    /// input and falls back to the binary search when the hint is more
    /// than a few cells off.
    #[inline]
    fn nearest_node_from(&self, s: f64, hint: usize) -> usize {
        const MAX_WALK: usize = 16;
        let xs = &self.s;
        let n = xs.len();
        if n == 1 {
            return 0;
        }
        let mut h = hint.min(n - 1);
        if s >= xs[h] {
            let mut walked = 0;
            while h + 1 < n && s >= xs[h + 1] {
                h += 1;
                walked += 1;
                if walked > MAX_WALK {
                    return self.nearest_node(s);
                }
            }
        } else {
            let mut walked = 0;
            while h > 0 && s < xs[h] {
                h -= 1;
                walked += 1;
                if walked > MAX_WALK {
                    return self.nearest_node(s);
                }
            }
            if s < xs[0] {
                return 0;
            }
        }
        // Here xs[h] ≤ s, and s < xs[h+1] whenever h+1 exists on the path
        // walked; apply the same tie rule as the binary search.
        if h + 1 < n && s - xs[h] > xs[h + 1] - s {
            h + 1
        } else {
            h
        }
    }

    /// Time-node index used for control lookups at clock time `t`: the
    /// nearest time node at or after `t` (controls are right-continuous in
    /// the backward solution), clamped to the horizon. Ratios within 1e-9
    /// of an integer snap to it, so simulation clocks that hit a time node
    /// up to round-off resolve to that node.
    pub fn time_node_at_or_after(&self, t: f64) -> usize {
        let ratio = t / self.dt;
        let m = if (ratio - ratio.round()).abs() <= 1e-9 { ratio.round() } else { ratio.ceil() };
        if m < 0.0 {
            return 0;
        }
        (m as usize).min(self.n_steps)
    }
}

/// Builds the state grid for one tick configuration.
///
/// # Parameters
///
/// * `s_ref` – reference price; always becomes an exact node.
/// * `ds` – base mesh width; zone edges are added on top.
/// * `margin` – domain half-width in units of σ√T (at least 3), plus two
///   max-ticks so the artificial boundary sits far from any state the
///   fair prices can reach from the working region.
///
/// The time step is the largest value that satisfies both stability
/// bounds (diffusion: `Δt ≤ ½·min(h₋h₊)/σ²`; intensity:
/// `Δt·(λ'_a + λ'_b) ≤ ½`) and divides the horizon exactly.
pub fn build_grid(
    tick: &TickConfig,
    params: &ModelParams,
    s_ref: f64,
    ds: f64,
    margin: f64,
) -> Result<StateGrid> {
    build_grid_refined(tick, params, s_ref, ds, margin, 1.0)
}

/// [`build_grid`] with the time step shrunk below the stability bound by
/// `time_refine ≥ 1`.
///
/// The stability-limited step is often dominated by the intensity budget
/// `Δt·(λ'_a + λ'_b) ≤ ½`, which no mesh refinement can relax; at that
/// coarseness the per-step linear execution weight `λ'Δt` visibly
/// overstates `1 − e^{−λ'Δt}` and biases values by several percent.
/// Refining the step in time trades run time for that bias.
pub fn build_grid_refined(
    tick: &TickConfig,
    params: &ModelParams,
    s_ref: f64,
    ds: f64,
    margin: f64,
    time_refine: f64,
) -> Result<StateGrid> {
    tick.validate()?;
    params.validate()?;
    if !(ds > 0.0) || !ds.is_finite() {
        return Err(Error::invalid("ds", format!("base mesh width must be positive, got {ds}")));
    }
    if !(time_refine >= 1.0) || !time_refine.is_finite() {
        return Err(Error::invalid(
            "time_refine",
            format!("time refinement must be at least 1, got {time_refine}"),
        ));
    }
    if !(margin >= 3.0) {
        return Err(Error::invalid(
            "margin",
            format!("domain margin must be at least 3 standard deviations, got {margin}"),
        ));
    }

    let half_width = margin * params.sigma * params.horizon.sqrt()
        + 2.0 * tick.alpha_a.max(tick.alpha_b);
    let s_min = s_ref - half_width;
    let s_max = s_ref + half_width;
    if !(s_max > s_min) {
        return Err(Error::EmptyDomain(format!("degenerate price range [{s_min}, {s_max}]")));
    }
    if ds > half_width {
        return Err(Error::invalid(
            "ds",
            format!("base mesh width {ds} exceeds the domain half-width {half_width}"),
        ));
    }

    // -- special points: domain ends, reference price, all zone edges -----
    #[derive(Clone, Copy, PartialEq)]
    enum Kind {
        Endpoint,
        Reference,
        Edge,
    }
    let mut specials: Vec<(f64, Kind)> = vec![
        (s_min, Kind::Endpoint),
        (s_max, Kind::Endpoint),
        (s_ref, Kind::Reference),
    ];
    for side in Side::BOTH {
        let alpha = tick.alpha(side);
        let eta = tick.eta(side);
        let k_lo = (s_min / alpha).floor() as i64 - 1;
        let k_hi = (s_max / alpha).ceil() as i64 + 1;
        for k in k_lo..=k_hi {
            let mid = k as f64 + 0.5;
            for edge in [(mid - eta) * alpha, (mid + eta) * alpha] {
                if edge > s_min && edge < s_max {
                    specials.push((edge, Kind::Edge));
                }
            }
        }
    }
    specials.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // -- merge: exact duplicates at 1e-12, then snap-merge below the
    //    minimum cell width. Priority: endpoints > reference > midpoint. --
    let snap_tol = SNAP_FRACTION * ds;
    let mut snapped = 0usize;
    let mut max_offset = 0.0f64;
    let mut merged: Vec<(f64, Kind)> = Vec::with_capacity(specials.len());
    for &(x, kind) in &specials {
        match merged.last_mut() {
            Some(&mut (ref mut last_x, ref mut last_kind)) if x - *last_x < snap_tol => {
                let exact_dup = x - *last_x <= NODE_MERGE_ABS;
                let (keep_x, keep_kind) = match (*last_kind, kind) {
                    (Kind::Endpoint, _) => (*last_x, Kind::Endpoint),
                    (_, Kind::Endpoint) => (x, Kind::Endpoint),
                    (Kind::Reference, _) => (*last_x, Kind::Reference),
                    (_, Kind::Reference) => (x, Kind::Reference),
                    _ if exact_dup => (*last_x, Kind::Edge),
                    _ => (0.5 * (*last_x + x), Kind::Edge),
                };
                if !exact_dup {
                    snapped += 1;
                    max_offset = max_offset.max((keep_x - *last_x).abs()).max((keep_x - x).abs());
                }
                *last_x = keep_x;
                *last_kind = keep_kind;
            }
            _ => merged.push((x, kind)),
        }
    }
    // A merge can pull the representative backwards toward an earlier
    // point; re-run until gaps are clean (clusters are tiny in practice).
    loop {
        let mut changed = false;
        let mut i = 1;
        while i < merged.len() {
            if merged[i].0 - merged[i - 1].0 < snap_tol {
                let (a, b) = (merged[i - 1], merged[i]);
                let keep = match (a.1, b.1) {
                    (Kind::Endpoint, _) => a,
                    (_, Kind::Endpoint) => b,
                    (Kind::Reference, _) => a,
                    (_, Kind::Reference) => b,
                    _ => (0.5 * (a.0 + b.0), Kind::Edge),
                };
                snapped += 1;
                max_offset = max_offset.max((keep.0 - a.0).abs()).max((keep.0 - b.0).abs());
                merged[i - 1] = keep;
                merged.remove(i);
                changed = true;
            } else {
                i += 1;
            }
        }
        if !changed {
            break;
        }
    }

    // -- fill each inter-special gap with a uniform sub-mesh --------------
    let mut s = Vec::with_capacity(merged.len() + (2.0 * half_width / ds) as usize + 8);
    let mut s_ref_idx = None;
    for w in merged.windows(2) {
        let (x, kind) = w[0];
        let y = w[1].0;
        if kind == Kind::Reference {
            s_ref_idx = Some(s.len());
        }
        s.push(x);
        let gap = y - x;
        let cells = ((gap / ds).round() as usize).max(1);
        for j in 1..cells {
            s.push(x + gap * (j as f64 / cells as f64));
        }
    }
    let (last_x, last_kind) = *merged.last().expect("at least the two endpoints survive");
    if last_kind == Kind::Reference {
        s_ref_idx = Some(s.len());
    }
    s.push(last_x);
    let s_ref_idx = s_ref_idx.expect("reference price is always a retained special point");
    debug_assert!(s.windows(2).all(|w| w[1] > w[0]), "mesh must be strictly increasing");
    debug_assert_eq!(s[s_ref_idx], s_ref, "reference price must be an exact node");

    let n = s.len();
    if n < 3 {
        return Err(Error::EmptyDomain(format!("only {n} mesh nodes; widen the domain")));
    }

    // -- branch bookkeeping ------------------------------------------------
    let ask: Vec<SideWorlds> = s.iter().map(|&x| side_worlds(x, tick, Side::Ask)).collect();
    let bid: Vec<SideWorlds> = s.iter().map(|&x| side_worlds(x, tick, Side::Bid)).collect();

    // -- time step from the stability bounds -------------------------------
    let sigma2 = params.sigma * params.sigma;
    let min_product = s
        .windows(3)
        .map(|w| (w[1] - w[0]) * (w[2] - w[1]))
        .fold(f64::INFINITY, f64::min);
    let mut dt_max = CFL_SAFETY * min_product / sigma2;
    let total_rate = params.reduced_rate(tick.alpha_a) + params.reduced_rate(tick.alpha_b);
    if total_rate > 0.0 {
        dt_max = dt_max.min(INTENSITY_WEIGHT_CAP / total_rate);
    }
    dt_max /= time_refine;
    let n_steps = (params.horizon / dt_max).ceil() as usize;
    if n_steps > MAX_TIME_STEPS {
        return Err(Error::invalid(
            "grid",
            format!(
                "stability bound needs {n_steps} time steps (dt ≤ {dt_max:.3e}); \
                 coarsen ds or narrow the domain"
            ),
        ));
    }
    let n_steps = n_steps.max(1);
    let dt = params.horizon / n_steps as f64;

    // -- diffusion weights --------------------------------------------------
    let mut p_minus = vec![0.0; n];
    let mut p_plus = vec![0.0; n];
    for i in 1..n - 1 {
        let h_m = s[i] - s[i - 1];
        let h_p = s[i + 1] - s[i];
        let denom = h_m + h_p;
        p_minus[i] = sigma2 * dt / (h_m * denom);
        p_plus[i] = sigma2 * dt / (h_p * denom);
        debug_assert!(
            p_minus[i] + p_plus[i] <= CFL_SAFETY + 1e-12,
            "diffusion weights exceed the stability budget at node {i}"
        );
    }

    Ok(StateGrid {
        s,
        dt,
        n_steps,
        q_max: params.q_max,
        ask,
        bid,
        p_minus,
        p_plus,
        s_ref,
        s_ref_idx,
        tick: *tick,
        snapped_specials: snapped,
        max_snap_offset: max_offset,
    })
}

fn side_worlds(x: f64, tick: &TickConfig, side: Side) -> SideWorlds {
    let b = valid_branches(x, tick.alpha(side), tick.eta(side));
    SideWorlds { lo: b.lo, hi: b.hi, on_boundary: b.on_boundary }
}

/// Verifies that a time step obeys both stability bounds for this grid;
/// used by `backward_step` before touching any data.
pub fn check_cfl(grid: &StateGrid, params: &ModelParams) -> Result<()> {
    let sigma2 = params.sigma * params.sigma;
    let min_product = grid
        .s
        .windows(3)
        .map(|w| (w[1] - w[0]) * (w[2] - w[1]))
        .fold(f64::INFINITY, f64::min);
    let mut bound = CFL_SAFETY * min_product / sigma2;
    let total_rate = params.reduced_rate(grid.tick.alpha_a) + params.reduced_rate(grid.tick.alpha_b);
    if total_rate > 0.0 {
        bound = bound.min(INTENSITY_WEIGHT_CAP / total_rate);
    }
    // Exact-divisibility round-off: dt = T/M can exceed the bound by one ulp.
    if grid.dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt: grid.dt, bound });
    }
    Ok(())
}

/// True when `price` is a grid multiple of `alpha` within the membership
/// tolerance (helper shared by tests and exports).
pub fn on_tick_grid(price: f64, alpha: f64) -> bool {
    let idx = (price / alpha).round();
    (price - idx * alpha).abs() <= GRID_MEMBERSHIP_REL * alpha
}
