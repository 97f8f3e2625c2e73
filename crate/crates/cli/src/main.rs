//! `qtorus`: config-driven runs of the per-mode solver and its checks.
//!
//! Exit codes: 0 success, 1 mathematical violation, 2 usage or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use commands::{Outcome, RunContext};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "qtorus", version, about = "Per-mode inverse of a quantum Dirac-type operator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated angular modes, overriding `grid.m_list`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    modes: Option<Vec<i64>>,
    /// Overrides `truncation.k_max`.
    #[arg(long)]
    kmax: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing hypotheses on the weight and coefficient families.
    Validate(Common),
    /// Apply the parametrix to a right-hand side and compare with the dense solve.
    Solve {
        #[command(flatten)]
        common: Common,
        /// JSON file `{"modes": [{"m", "n", "r1", "r2", "q0"}]}`; random fixtures when absent.
        #[arg(long)]
        rhs: Option<PathBuf>,
        /// Seed for random fixtures.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// HS norms, decay envelopes and the kernel inequality suite over the grid.
    Scan(Common),
    /// Write the kernel tables `I`, `K` and per-mode scalars.
    Dump(Common),
}

fn context(common: &Common) -> Result<RunContext> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(ms) = &common.modes {
        if ms.is_empty() {
            bail!("--modes needs at least one value");
        }
        cfg.grid.m_list = ms.clone();
    }
    if let Some(k) = common.kmax {
        if k == 0 {
            bail!("--kmax must be at least 1");
        }
        cfg.truncation.k_max = k;
    }
    let out_dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok(RunContext { cfg, out_dir })
}

fn run(cli: Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Validate(c) => commands::validate(&context(c)?),
        Command::Solve { common, rhs, seed } => commands::solve(&context(common)?, rhs.as_deref(), *seed),
        Command::Scan(c) => commands::scan(&context(c)?),
        Command::Dump(c) => commands::dump(&context(c)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
