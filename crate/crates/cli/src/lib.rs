//! `planner` command-line driver.
//!
//! Stages: `synth` writes synthetic `costs.csv`/`sales.csv`; `forecast`
//! trains one cost model per product; `intervals` brackets next-week sales;
//! `rank` scores products; `optimize` plans prices and allocations for the
//! top-ranked products. `run-all` chains them. Every invocation writes a
//! `manifest.json` next to its outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "planner",
    version,
    about = "Cost forecasting, sales intervals, ranking and price/allocation planning"
)]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for all inputs and outputs named in the config.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Raw,
    Normalized,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic costs.csv and sales.csv.
    Synth,
    /// Train per-product cost models and forecast the next week.
    Forecast,
    /// Bootstrap intervals on next-week sales volume.
    Intervals,
    /// Entropy-weighted TOPSIS ranking of products.
    Rank,
    /// Genetic-algorithm price and allocation plan.
    Optimize {
        /// Also run an equal-budget baseline.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// MSE, MAE and RMSE of a forecast file against a costs file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "raw")]
        space: SpaceArg,
    },
    /// synth, forecast, intervals, rank and optimize in sequence.
    RunAll {
        /// Use the existing costs.csv and sales.csv.
        #[arg(long)]
        skip_synth: bool,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
}

impl Cli {
    /// Defaults, then the config file, then `--set`, then `--seed`.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth => "synth",
        Command::Forecast => "forecast",
        Command::Intervals => "intervals",
        Command::Rank => "rank",
        Command::Optimize { .. } => "optimize",
        Command::Evaluate { .. } => "evaluate",
        Command::RunAll { .. } => "run-all",
    }
}

fn report_optimize(s: &commands::OptimizeSummary) {
    println!("products={} ga_profit={}", s.products, s.ga_profit);
    if let Some(r) = s.random_profit {
        println!("random_profit={r}");
    }
}

/// Runs one command and writes its manifest.
pub fn run(cli: &Cli) -> CliResult<RunManifest> {
    let cfg = cli.run_config()?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut m = RunManifest::new(command_name(&cli.command), &cfg);
    match &cli.command {
        Command::Synth => commands::cmd_synth(&cfg, out, &mut m)?,
        Command::Forecast => commands::cmd_forecast(&cfg, out, &mut m)?,
        Command::Intervals => commands::cmd_intervals(&cfg, out, &mut m)?,
        Command::Rank => commands::cmd_rank(&cfg, out, &mut m)?,
        Command::Optimize { baseline } => {
            report_optimize(&commands::cmd_optimize(
                &cfg,
                out,
                &mut m,
                baseline.is_some(),
            )?);
        }
        Command::Evaluate {
            predictions,
            truth,
            space,
        } => {
            let space = match space {
                SpaceArg::Raw => commands::Space::Raw,
                SpaceArg::Normalized => commands::Space::Normalized,
            };
            let (n, r) = commands::cmd_evaluate(predictions, truth, space, &mut m)?;
            println!("n={n} mse={} mae={} rmse={}", r.mse, r.mae, r.rmse);
        }
        Command::RunAll {
            skip_synth,
            baseline,
        } => {
            if !skip_synth {
                commands::cmd_synth(&cfg, out, &mut m)?;
            }
            commands::cmd_forecast(&cfg, out, &mut m)?;
            commands::cmd_intervals(&cfg, out, &mut m)?;
            commands::cmd_rank(&cfg, out, &mut m)?;
            report_optimize(&commands::cmd_optimize(
                &cfg,
                out,
                &mut m,
                baseline.is_some(),
            )?);
        }
    }
    m.write(&cfg.resolve(out, &cfg.paths.manifest))?;
    Ok(m)
}
