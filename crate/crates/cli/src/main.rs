//! `fedids` command-line driver.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 when the command line
//! or a config file is invalid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod partition;
mod report;
mod run;

#[derive(Parser)]
#[command(
    name = "fedids",
    version,
    about = "Federated intrusion-detection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a scenario partition from a flow CSV or a synthetic profile.
    Partition {
        /// TOML config file.
        config: PathBuf,
    },
    /// Run an experiment over a partition directory.
    Run {
        /// TOML config file.
        config: PathBuf,
    },
    /// Summarize final-round accuracy of one or more metrics CSVs.
    Report {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        /// Directory for summary.txt.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Partition { config } => partition::cmd_partition(config),
        Command::Run { config } => run::cmd_run(config),
        Command::Report { csvs, out } => report::cmd_report(csvs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<config::ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
