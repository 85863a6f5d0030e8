//! Backward finite-difference solver for the market maker's value function.
//!
//! The maker quotes one unit at the fair ask `S^a` and fair bid `S^b`
//! (side-specific tick grids, uncertainty-zone dynamics) around a Brownian
//! efficient price `S`. Executions on side `i` arrive with intensity
//!
//! ```text
//!     λ·ℓ^i / (1 + (κ·α^i)²)     while the inventory cutoff allows quoting,
//! ```
//!
//! where `ℓ^i ∈ {0, 1}` is the maker's presence control. The value function
//! `h(t, S^a, S^b, S, q)` solves a backward equation with
//!
//! * diffusion `½σ²·∂_SS`,
//! * running penalty `−(φ + φ₋·1[q<0])·q²`,
//! * per-side obstacle terms `λ'_i·max(0, gain_i)` with
//!   `gain_a = S^a + h(q−1) − h(q)` and `gain_b = −S^b + h(q+1) − h(q)`,
//! * terminal condition `h(T) = q·(S − A·q)`,
//! * continuity couplings at zone edges tying each pre-jump fair-price
//!   configuration to its post-jump one.
//!
//! The state space is laid out per price node with *two candidate worlds
//! per side* (the admissible grid roundings of the fair price), so every
//! node carries 2×2 branch slots — the data shape behind the 1/2/4-branch
//! overlap structure of the value function. See [`grid`] for the mesh and
//! branch bookkeeping and [`solver`] for the scheme itself.

pub mod grid;
pub mod solver;

pub use grid::{build_grid, build_grid_refined, SideWorlds, StateGrid};
pub use solver::{
    backward_step, branch_profile, optimal_controls, solve, solve_with, BranchProfileRow,
    FeeValues, PolicyGrid, SolveOptions, SolveOutput, ValueGrid,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zones::Side;

/// Market and preference constants.
///
/// `sigma` is the efficient-price volatility in price·s^(−1/2) (Brownian
/// scaling), `lambda` the base order-arrival rate in 1/s, `kappa` the
/// tick-size sensitivity of takers in 1/price, `phi` the running inventory
/// penalty rate, `phi_minus` the additional penalty rate applied while the
/// inventory is short, `a` the terminal inventory penalty coefficient,
/// `q_max` the inventory bound enforced through the intensity cutoff,
/// `horizon` the trading horizon T in seconds, and `c` the platform fee
/// earned per executed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub phi: f64,
    pub phi_minus: f64,
    pub a: f64,
    pub q_max: i32,
    pub horizon: f64,
    pub c: f64,
}

impl Default for ModelParams {
    /// Baseline liquid-asset parameter set used throughout the experiments:
    /// σ = 0.01, λ = 4, κ = 10, φ = 0.005, φ₋ = 0, A = 0.1, q_max = 5,
    /// T = 40 s, c = 1.
    fn default() -> Self {
        ModelParams {
            sigma: 0.01,
            lambda: 4.0,
            kappa: 10.0,
            phi: 0.005,
            phi_minus: 0.0,
            a: 0.1,
            q_max: 5,
            horizon: 40.0,
            c: 1.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 2] = [("horizon", self.horizon), ("c", self.c)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("phi", self.phi),
            ("phi_minus", self.phi_minus),
            ("a", self.a),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        if self.q_max < 1 {
            return Err(Error::invalid("q_max", format!("must be at least 1, got {}", self.q_max)));
        }
        Ok(())
    }

    /// Reduced arrival rate on one side when present:
    /// `λ / (1 + (κ·α_side)²)`.
    pub fn reduced_rate(&self, alpha: f64) -> f64 {
        self.lambda / (1.0 + (self.kappa * alpha) * (self.kappa * alpha))
    }
}

/// Execution intensity of one side: `λ·ℓ/(1 + (κα)²)` while the inventory
/// cutoff allows quoting that side (ask needs `q > −q_max`, bid needs
/// `q < q_max`), else 0.
pub fn intensity(ell: bool, alpha: f64, q: i32, side: Side, params: &ModelParams) -> f64 {
    if !ell || !side_active(side, q, params.q_max) {
        return 0.0;
    }
    params.reduced_rate(alpha)
}

/// Inventory cutoff of one side: `sign(side)·q > −q_max`.
pub fn side_active(side: Side, q: i32, q_max: i32) -> bool {
    side.sign() * q > -q_max
}

/// Terminal value `q·(S − A·q)`: the book marked at the efficient price
/// with a quadratic liquidation penalty.
pub fn terminal_value(s: f64, q: i32, a: f64) -> f64 {
    let qf = q as f64;
    qf * (s - a * qf)
}

/// Running penalty rate `−φ·q² − φ₋·q²·1[q < 0]`.
pub fn running_penalty(q: i32, params: &ModelParams) -> f64 {
    let q2 = (q as f64) * (q as f64);
    let mut rate = -params.phi * q2;
    if q < 0 {
        rate -= params.phi_minus * q2;
    }
    rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn intensity_direct_values() {
        let p = ModelParams::default();
        // λ = 4, κα = 0.1 → 4/1.01.
        assert_relative_eq!(
            intensity(true, 0.01, 0, Side::Ask, &p),
            4.0 / 1.01,
            max_relative = 1e-12
        );
        assert_eq!(intensity(false, 0.01, 0, Side::Ask, &p), 0.0, "absent maker earns no flow");
        // Ask quoting is forbidden at q = −q_max (cannot go shorter).
        assert_eq!(intensity(true, 0.01, -5, Side::Ask, &p), 0.0);
        // Bid quoting is forbidden at q = +q_max.
        assert_eq!(intensity(true, 0.01, 5, Side::Bid, &p), 0.0);
        // Interior inventory leaves both sides available.
        assert!(intensity(true, 0.01, -4, Side::Ask, &p) > 0.0);
        assert!(intensity(true, 0.01, 4, Side::Bid, &p) > 0.0);
    }

    #[test]
    fn terminal_value_cases() {
        assert_relative_eq!(terminal_value(10.0, 2, 0.1), 19.6, max_relative = 1e-12);
        assert_eq!(terminal_value(123.4, 0, 0.1), 0.0);
        // Short inventory is penalized by the same quadratic.
        assert_relative_eq!(terminal_value(10.0, -2, 0.1), -20.4, max_relative = 1e-12);
    }

    #[test]
    fn running_penalty_cases() {
        let p = ModelParams { phi: 0.005, phi_minus: 0.005, ..ModelParams::default() };
        assert_relative_eq!(running_penalty(2, &p), -0.02, max_relative = 1e-12);
        assert_relative_eq!(running_penalty(-2, &p), -0.04, max_relative = 1e-12);
        assert_eq!(running_penalty(0, &p), 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::default().validate().is_ok());
        // A zero-volatility market is legal (frozen efficient price) …
        assert!(ModelParams { sigma: 0.0, ..ModelParams::default() }.validate().is_ok());
        // … a negative one is not.
        assert!(ModelParams { sigma: -0.01, ..ModelParams::default() }.validate().is_err());
        assert!(ModelParams { q_max: 0, ..ModelParams::default() }.validate().is_err());
        assert!(ModelParams { phi: -1.0, ..ModelParams::default() }.validate().is_err());
        // Zero lambda is legal: the frozen-flow closed form depends on it.
        assert!(ModelParams { lambda: 0.0, ..ModelParams::default() }.validate().is_ok());
    }
}
