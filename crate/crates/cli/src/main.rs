//! `qcal`: run calibration primitives, drifting campaigns and analyses.

mod analyze;
mod campaign;
mod output;
mod run;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qcal_core::config::RunConfig;
use qcal_core::primitives::PrimitiveKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qcal",
    version,
    about = "Sparse calibration of a simulated drifting qubit"
)]
struct Cli {
    /// TOML configuration; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Override a config value, e.g. `--set campaign.n_cycles=100`.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one primitive and write its record.
    Run {
        /// t1, readout, resonance, pi, pi2, ramsey, crb-ade or crb-dense.
        primitive: String,
        /// Also write a measured-vs-model figure.
        #[arg(long)]
        plot: bool,
        /// T1 guess (µs) for the t1 primitive; defaults to the true T1.
        #[arg(long)]
        t1_guess: Option<f64>,
    },
    /// Run the closed-loop campaign, resuming an existing dataset.
    Campaign {
        /// Discard any existing dataset instead of resuming.
        #[arg(long)]
        fresh: bool,
    },
    /// Analyze a campaign dataset.
    Analyze {
        #[arg(value_enum)]
        analyses: Vec<analyze::Analysis>,
        /// Dataset to read; defaults to the campaign file in the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output_dir={}", toml_string(out)));
    }
    overrides.extend(cli.set.iter().cloned());
    RunConfig::load(cli.config.as_deref(), &overrides).map_err(|e| CliError::Config(e.to_string()))
}

fn toml_string(s: &str) -> String {
    let escaped = s.replace('\\', "\\\\").replace('"', "\\\"");
    format!("\"{escaped}\"")
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Run {
            primitive,
            plot,
            t1_guess,
        } => {
            let kind = PrimitiveKind::parse(&primitive).ok_or_else(|| {
                let names: Vec<&str> = PrimitiveKind::ALL.iter().map(|k| k.name()).collect();
                CliError::Usage(format!(
                    "unknown primitive {primitive:?}; expected one of {}",
                    names.join(", ")
                ))
            })?;
            run::cmd_run(&cfg, kind, plot, t1_guess)
        }
        Command::Campaign { fresh } => campaign::cmd_campaign(&cfg, fresh),
        Command::Analyze { analyses, input } => analyze::cmd_analyze(&cfg, &analyses, input),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
