//! `tickopt` — solver, simulator, tick scans and figure data from one
//! sectioned config file.
//!
//! Exit codes: 0 on success, 1 for validation/configuration errors, 2 when
//! a numerical assertion fails (oracle certification, probability bounds).

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Context;
use clap::{CommandFactory, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "tickopt",
    version,
    about = "Tick-size design toolkit: backward solver, market simulator, tick scans"
)]
struct Cli {
    /// Experiment config file (TOML, one section per module).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set grid.ds=1e-3 (repeatable,
    /// applied in order).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Shorthand for --set sim.seed=N.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory (default: <out_dir>/<command or preset>).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for scans and simulation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one backward solve; writes values.csv, policy.csv, summary.json.
    Solve,
    /// Simulate the market under the solved policy; writes summary.json,
    /// paths.csv and per-path transaction logs.
    Simulate,
    /// Value a grid of tick pairs; writes scan.csv and argmax.json.
    Scan,
    /// Estimate the zone half-width from a transaction log
    /// (CSV: time,price,side with side in {a,b}); writes eta.csv.
    EstimateEta {
        /// Transaction CSV to analyze.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Certify the solver against the exhaustive lattice oracle on a small
    /// problem; exits 2 if the tables disagree.
    OracleCheck,
    /// Emit plot-ready data for a preset (fig1..fig7, appendix).
    Figure {
        /// Preset name; defaults to the config's `preset` key.
        preset: Option<String>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep exit code 2 reserved for numerical failures: argument
            // errors exit 1, help/version exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        let code = match e.downcast_ref::<tickopt_core::Error>() {
            Some(core) if core.is_numerical() => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the thread pool")?;
    }
    let cfg = config::load(cli.config.as_deref(), &cli.sets, cli.seed)?;

    match &cli.command {
        Command::Solve => {
            let dir = out_dir(&cli.out, &cfg, "solve");
            commands::solve(&cfg, &dir)
        }
        Command::Simulate => {
            let dir = out_dir(&cli.out, &cfg, "simulate");
            commands::simulate(&cfg, &dir)
        }
        Command::Scan => {
            let dir = out_dir(&cli.out, &cfg, "scan");
            commands::scan(&cfg, &dir)
        }
        Command::EstimateEta { input } => {
            let dir = out_dir(&cli.out, &cfg, "estimate-eta");
            commands::estimate_eta(&cfg, input, &dir)
        }
        Command::OracleCheck => {
            let dir = out_dir(&cli.out, &cfg, "oracle-check");
            commands::oracle_check(&cfg, &dir)
        }
        Command::Figure { preset } => {
            let name = preset
                .clone()
                .or_else(|| (cfg.preset != "custom").then(|| cfg.preset.clone()))
                .ok_or_else(|| {
                    clap::Error::raw(
                        clap::error::ErrorKind::MissingRequiredArgument,
                        "figure needs a preset: pass one (fig1..fig7, appendix) or set `preset` in the config\n",
                    )
                    .with_cmd(&Cli::command())
                })?;
            let (cfg, fig) = config::expand_preset(cfg, &name)?;
            let dir = out_dir(&cli.out, &cfg, &name);
            commands::figure(&cfg, fig, &dir)
        }
    }
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: &config::ExperimentConfig, leaf: &str) -> PathBuf {
    match cli_out {
        Some(dir) => dir.clone(),
        None => PathBuf::from(&cfg.out_dir).join(leaf),
    }
}
