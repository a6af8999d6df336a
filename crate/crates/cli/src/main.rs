mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{ConfigError, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

/// Transient stability and basin-of-attraction analysis of a grid-forming
/// VSG.
#[derive(Debug, Parser)]
#[command(name = "vsg-doa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `output.dir` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Set a configuration value by dotted path, e.g. `vsg.damping_d=1018.6`.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Locate and classify the equilibria of the configured grid.
    Equilibria,
    /// Forward trajectories from a grid of initial states.
    Portrait,
    /// Basin boundary and membership polygon.
    Doa,
    /// Run the configured fault scenarios.
    Simulate {
        /// Only the scenario with this name.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Critical clearing angles by area balance, basin crossing and
    /// bisection.
    Cca,
    /// Basin area across parameter values.
    Sweep {
        /// Only the sweep over this parameter.
        #[arg(long)]
        parameter: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Analysis(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Analysis(_) => 2,
        }
    }
}

fn thread_cap() -> Result<Option<usize>, ConfigError> {
    match std::env::var("VSG_DOA_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(config::invalid("VSG_DOA_THREADS", format!("expected a positive integer, got {s:?}"))),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = thread_cap()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Analysis(e.into()))?;
    }
    let path = cli
        .config
        .ok_or_else(|| config::invalid("--config", "a configuration file is required"))?;
    let cfg = RunConfig::load(&path, &cli.overrides)?;
    let out = cli.out.unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Analysis(anyhow::Error::new(e).context(format!("creating {}", out.display()))))?;
    match cli.command {
        Command::Equilibria => commands::run_equilibria(&cfg, &out),
        Command::Portrait => commands::run_portrait(&cfg, &out),
        Command::Doa => commands::run_doa(&cfg, &out),
        Command::Simulate { scenario } => commands::run_simulate(&cfg, &out, scenario.as_deref()),
        Command::Cca => commands::run_cca(&cfg, &out),
        Command::Sweep { parameter } => commands::run_sweep(&cfg, &out, parameter.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
