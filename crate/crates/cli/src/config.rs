//! Experiment configuration: a sectioned key-value file (TOML, one section
//! per module), dotted-path overrides, and figure-preset expansion.
//!
//! Unknown keys anywhere in the file are rejected. Every preset expands to
//! a fully explicit configuration which the commands dump next to their
//! outputs, so any run can be reproduced from `--config` alone.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tickopt_core::oracle::FillModel;
use tickopt_core::{
    Method, ModelParams, Result as CoreResult, ScanSpec, SimConfig, SolveOptions, TickConfig,
    TickSet, ValuationSpec,
};

/// Fully explicit experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Version of the tool that wrote this file (overwritten on dump).
    pub tool_version: String,
    /// Experiment preset: `fig1`..`fig7`, `appendix`, or `custom`.
    pub preset: String,
    /// Base output directory used when `--out` is not given; each command
    /// writes into a subdirectory named after itself (or its preset).
    pub out_dir: String,
    pub model: ModelSection,
    pub ticks: TickSection,
    pub grid: GridSection,
    pub initial: InitialSection,
    pub sim: SimSection,
    pub scan: ScanSection,
    pub solve: SolveSection,
    pub oracle: OracleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            preset: "custom".to_string(),
            out_dir: "tickopt-out".to_string(),
            model: ModelSection::default(),
            ticks: TickSection::default(),
            grid: GridSection::default(),
            initial: InitialSection::default(),
            sim: SimSection::default(),
            scan: ScanSection::default(),
            solve: SolveSection::default(),
            oracle: OracleSection::default(),
        }
    }
}

/// Market and preference constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
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

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            sigma: p.sigma,
            lambda: p.lambda,
            kappa: p.kappa,
            phi: p.phi,
            phi_minus: p.phi_minus,
            a: p.a,
            q_max: p.q_max,
            horizon: p.horizon,
            c: p.c,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            sigma: self.sigma,
            lambda: self.lambda,
            kappa: self.kappa,
            phi: self.phi,
            phi_minus: self.phi_minus,
            a: self.a,
            q_max: self.q_max,
            horizon: self.horizon,
            c: self.c,
        }
    }
}

/// Tick sizes and the zone-width scaling anchor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TickSection {
    pub eta_0: f64,
    pub alpha_0: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
}

impl Default for TickSection {
    fn default() -> Self {
        Self { eta_0: 0.3, alpha_0: 0.01, alpha_a: 0.01, alpha_b: 0.01 }
    }
}

impl TickSection {
    pub fn tick_config(&self) -> CoreResult<TickConfig> {
        TickConfig::from_scaling(self.eta_0, self.alpha_0, self.alpha_a, self.alpha_b)
    }
}

/// Price-axis mesh of the backward solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub s_ref: f64,
    pub ds: f64,
    /// Domain half-width in units of `σ√T`.
    pub margin: f64,
    /// Time-step refinement below the stability bound (≥ 1).
    pub time_refine: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { s_ref: 10.5, ds: 2e-3, margin: 5.0, time_refine: 4.0 }
    }
}

/// Working-state inventory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub q0: i32,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { q0: 0 }
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt_sim: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Paths whose price-change events are written as transaction logs.
    pub log_paths: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt_sim: 1e-3, n_paths: 10_000, seed: 12_345, log_paths: 1 }
    }
}

impl SimSection {
    pub fn sim_config(&self, s0: f64, q0: i32) -> SimConfig {
        SimConfig {
            dt_sim: self.dt_sim,
            n_paths: self.n_paths,
            seed: self.seed,
            s0,
            q0,
            s_a0: None,
            s_b0: None,
            log_paths: self.log_paths,
        }
    }
}

/// Tick-scan settings (the `scan` command and the scan-backed figures).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub alpha_a: TickSet,
    pub alpha_b: TickSet,
    /// Scan only the diagonal `α_a = α_b` of the ask set.
    pub symmetric: bool,
    /// Short-penalty rates; one scan pass per entry.
    pub phi_minus: Vec<f64>,
    pub method: Method,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            alpha_a: TickSet::List { values: aligned_symmetric_ticks() },
            alpha_b: TickSet::List { values: aligned_symmetric_ticks() },
            symmetric: true,
            phi_minus: vec![0.0],
            method: Method::Pde,
        }
    }
}

/// Storage choices of the backward solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub store_values: bool,
    pub store_policy: bool,
    /// Also integrate the expected-fee transport equation.
    pub fee_pde: bool,
    pub value_budget_mb: usize,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self { store_values: true, store_policy: true, fee_pde: false, value_budget_mb: 256 }
    }
}

impl SolveSection {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            store_values: self.store_values,
            value_budget_bytes: self.value_budget_mb << 20,
            store_policy: self.store_policy,
            fee_pde: self.fee_pde,
        }
    }
}

/// Certification lattice settings (the `oracle-check` command). The
/// lattice caps (≤ 200 price nodes, ≤ 400 time steps) force a smaller
/// horizon and inventory bound than the trading experiments use.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub fill: FillKind,
    pub ds: f64,
    pub margin: f64,
    pub horizon: f64,
    pub q_max: i32,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { fill: FillKind::Linear, ds: 0.003, margin: 3.0, horizon: 3.0, q_max: 2 }
    }
}

/// Config-file face of the oracle's fill model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillKind {
    Linear,
    ExpThinning,
}

impl FillKind {
    pub fn to_model(self) -> FillModel {
        match self {
            FillKind::Linear => FillModel::Linear,
            FillKind::ExpThinning => FillModel::ExpThinning,
        }
    }
}

impl ExperimentConfig {
    /// Per-pair valuation settings assembled from the grid, initial-state,
    /// simulation and scan sections.
    pub fn valuation_spec(&self) -> ValuationSpec {
        ValuationSpec {
            s_ref: self.grid.s_ref,
            q0: self.initial.q0,
            ds: self.grid.ds,
            margin: self.grid.margin,
            time_refine: self.grid.time_refine,
            method: self.scan.method,
            n_paths: self.sim.n_paths,
            dt_sim: self.sim.dt_sim,
            seed: self.sim.seed,
        }
    }

    /// Full scan specification.
    pub fn scan_spec(&self) -> ScanSpec {
        ScanSpec {
            alpha_a: self.scan.alpha_a.clone(),
            alpha_b: self.scan.alpha_b.clone(),
            symmetric: self.scan.symmetric,
            eta_0: self.ticks.eta_0,
            alpha_0: self.ticks.alpha_0,
            phi_minus: self.scan.phi_minus.clone(),
            valuation: self.valuation_spec(),
        }
    }
}

// ---------------------------------------------------------------------------
// tick axes used by the presets
// ---------------------------------------------------------------------------

/// Symmetric tick family of the default scan: resolution 5e-4 over
/// [0.0045, 0.05], restricted to ticks under which the half-unit price
/// level is a whole number of ticks, so the reference price 10.5 lies
/// exactly on every grid of the family.
pub fn aligned_symmetric_ticks() -> Vec<f64> {
    TickSet::Range { lo: 0.0045, hi: 0.05, step: 5e-4 }
        .values()
        .into_iter()
        .filter(|&a| {
            let n = 0.5 / a;
            (n - n.round()).abs() <= 1e-6
        })
        .collect()
}

/// One-sided scan axis: ticks of the form `10.5/m`, spaced ~2e-3 apart
/// across [0.0045, 0.05]. Keeping the reference price exactly on the
/// scanned side's grid removes the anchoring-phase artifact that otherwise
/// dominates the point-to-point variation of the platform value.
pub fn anchored_axis() -> Vec<f64> {
    const MS: [u64; 24] = [
        2333, 1750, 1312, 1050, 875, 750, 656, 583, 525, 477, 437, 404, 375, 350, 328, 309, 292,
        276, 262, 250, 239, 228, 219, 210,
    ];
    MS.iter().map(|&m| 10.5 / m as f64).collect()
}

/// Coarser anchored axis for the two-dimensional scans (12 × 12 pairs).
pub fn anchored_axis_2d() -> Vec<f64> {
    const MS: [u64; 12] = [2333, 1312, 875, 656, 525, 437, 375, 328, 292, 262, 239, 210];
    MS.iter().map(|&m| 10.5 / m as f64).collect()
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

/// What a figure preset computes once its configuration is expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Maker and platform value against the symmetric tick, three penalty
    /// rates.
    Fig1,
    /// Fig1 with the zero-penalty pass subtracted.
    Fig2,
    /// Both values against the ask tick at a fixed bid tick of 0.0124.
    Fig3,
    /// Two-dimensional value surfaces without the short penalty.
    Fig4,
    /// The same surfaces with φ₋ = 0.005.
    Fig5,
    /// Difference of the two surfaces (penalized minus plain).
    Fig6,
    /// Both values against the bid tick at a fixed ask tick of 0.0045.
    Fig7,
    /// Value against the price axis with up to four branch curves.
    Appendix,
}

impl Figure {
    pub fn parse(name: &str) -> Option<Figure> {
        Some(match name {
            "fig1" => Figure::Fig1,
            "fig2" => Figure::Fig2,
            "fig3" => Figure::Fig3,
            "fig4" => Figure::Fig4,
            "fig5" => Figure::Fig5,
            "fig6" => Figure::Fig6,
            "fig7" => Figure::Fig7,
            "appendix" => Figure::Appendix,
            _ => return None,
        })
    }
}

/// Expands a figure preset over a base configuration: the preset dictates
/// the experiment structure (tick sets, penalty passes, what to store);
/// numeric knobs (mesh, paths, seed) stay as configured.
pub fn expand_preset(mut cfg: ExperimentConfig, name: &str) -> anyhow::Result<(ExperimentConfig, Figure)> {
    let figure = Figure::parse(name)
        .with_context(|| format!("unknown preset `{name}` (expected fig1..fig7 or appendix)"))?;
    cfg.preset = name.to_string();
    match figure {
        Figure::Fig1 | Figure::Fig2 => {
            let ticks = aligned_symmetric_ticks();
            cfg.scan = ScanSection {
                alpha_a: TickSet::List { values: ticks.clone() },
                alpha_b: TickSet::List { values: ticks },
                symmetric: true,
                phi_minus: vec![0.0, 0.0005, 0.005],
                method: Method::Pde,
            };
        }
        Figure::Fig3 => {
            cfg.scan = ScanSection {
                alpha_a: TickSet::List { values: anchored_axis() },
                alpha_b: TickSet::List { values: vec![0.0124] },
                symmetric: false,
                phi_minus: vec![0.0, 0.0005, 0.005],
                method: Method::Pde,
            };
        }
        Figure::Fig4 | Figure::Fig5 | Figure::Fig6 => {
            let axis = anchored_axis_2d();
            cfg.scan = ScanSection {
                alpha_a: TickSet::List { values: axis.clone() },
                alpha_b: TickSet::List { values: axis },
                symmetric: false,
                phi_minus: match figure {
                    Figure::Fig4 => vec![0.0],
                    Figure::Fig5 => vec![0.005],
                    _ => vec![0.0, 0.005],
                },
                method: Method::Pde,
            };
        }
        Figure::Fig7 => {
            cfg.scan = ScanSection {
                alpha_a: TickSet::List { values: vec![0.0045] },
                alpha_b: TickSet::List { values: anchored_axis() },
                symmetric: false,
                phi_minus: vec![0.0, 0.005],
                method: Method::Pde,
            };
        }
        Figure::Appendix => {
            cfg.ticks.alpha_a = 0.01;
            cfg.ticks.alpha_b = 0.00625;
            cfg.solve.store_values = true;
            cfg.solve.store_policy = false;
            cfg.solve.fee_pde = false;
        }
    }
    Ok((cfg, figure))
}

// ---------------------------------------------------------------------------
// loading and overrides
// ---------------------------------------------------------------------------

/// Loads the config file (or starts from defaults), applies `--set`
/// overrides in order, then the `--seed` shorthand, and deserializes with
/// unknown keys rejected.
pub fn load(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> anyhow::Result<ExperimentConfig> {
    let mut table: toml::Table = match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading config {}", p.display()))?
            .parse()
            .with_context(|| format!("parsing config {}", p.display()))?,
        None => toml::Table::new(),
    };
    for s in sets {
        apply_set(&mut table, s)?;
    }
    if let Some(n) = seed {
        apply_set(&mut table, &format!("sim.seed={n}"))?;
    }
    let cfg: ExperimentConfig =
        table.try_into().context("validating config (unknown or mistyped key?)")?;
    Ok(cfg)
}

/// Applies one `key.path=value` override. The value is parsed as a TOML
/// literal (numbers, booleans, arrays, inline tables, quoted strings);
/// anything that fails to parse is taken as a bare string.
fn apply_set(table: &mut toml::Table, setting: &str) -> anyhow::Result<()> {
    let Some((path, raw)) = setting.split_once('=') else {
        bail!("--set takes key.path=value, got `{setting}`");
    };
    let value = parse_toml_value(raw.trim());
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        bail!("--set key path `{path}` has an empty segment");
    }
    let mut cursor = table;
    for seg in &segments[..segments.len() - 1] {
        cursor = cursor
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("--set path `{path}`: `{seg}` is not a section"))?;
    }
    cursor.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
