//! `co3`: run federated experiments, verification suites and family fits.

mod fit;
mod run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use co3::fedsim::Parallelism;

#[derive(Debug, Parser)]
#[command(name = "co3", version, about = "Quantized, entropy-coded federated SGD with error feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every scheme in a config file and write one CSV per scheme plus a summary.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Parent directory; each run gets a fresh subdirectory.
        #[arg(long, value_name = "DIR", default_value = "runs")]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Run a verification suite; exits with status 1 on any violation.
    Verify {
        #[arg(long, value_enum, value_name = "NAME")]
        suite: Suite,
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        /// Also write the suite's report files here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Fit the four comparison families to a file of newline-delimited reals.
    Fit {
        #[arg(value_name = "SAMPLES")]
        samples: PathBuf,
        /// Also write `fits.csv` here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Lemma1,
    Convergence,
    Distfit,
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    Violation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Parallelism::from_env().map_err(anyhow::Error::from).and_then(|par| match cli.command {
        Command::Run { config, out, seed } => run::cmd_run(&config, &out, seed, par),
        Command::Verify { suite, seed, out } => verify::cmd_verify(suite, seed, out.as_deref(), par),
        Command::Fit { samples, out } => fit::cmd_fit(&samples, out.as_deref()),
    });
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
