//! Command-line front end.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_certify, cmd_compare, cmd_run, cmd_sweep};
pub use config::{load_scenario, ConfigError, ConfigFile};

#[derive(Debug, Parser)]
#[command(
    name = "bearing-consensus",
    version,
    about = "Distributed bearing-only consensus observer: certify, simulate, compare"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the stability conditions for a scenario
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Simulate the observer network and write the run log as CSV
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds, run concurrently
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the observer and the filter baseline on the same bearing stream
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Summarize final errors over several seeds
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

/// Parse arguments and dispatch; returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match cli.command {
        Command::Certify { config, quiet } => cmd_certify(&config, quiet, out, err),
        Command::Run {
            config,
            out: csv,
            seeds,
            quiet,
        } => cmd_run(&config, csv.as_deref(), seeds.as_deref(), quiet, out, err),
        Command::Compare {
            config,
            out: csv,
            quiet,
        } => cmd_compare(&config, csv.as_deref(), quiet, out, err),
        Command::Sweep {
            config,
            seeds,
            out: csv,
            quiet,
        } => cmd_sweep(&config, &seeds, csv.as_deref(), quiet, out, err),
    }
}
