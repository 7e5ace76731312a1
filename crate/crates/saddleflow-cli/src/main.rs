//! saddleflow: simulate, classify and verify saddle-point gradient flows.
//!
//! Exit codes: 0 ok, 1 check failure, 2 config error, 3 numeric error.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use saddleflow::error::Error;

#[derive(Parser)]
#[command(
    name = "saddleflow",
    version,
    about = "Saddle-point gradient dynamics: simulation, certificates, noise ensembles and verification suites"
)]
struct Cli {
    /// Omit timestamps so identical runs produce byte-identical outputs.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the (optionally gains-weighted or projected) flow and
    /// write a trajectory CSV plus a JSON summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON path (defaults to stdout).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Override the horizon.
        #[arg(long)]
        t: Option<f64>,
        /// Override the number of output samples.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        rel_tol: Option<f64>,
        #[arg(long)]
        abs_tol: Option<f64>,
    },
    /// Locate a saddle point and classify the limiting behaviour.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Certificate JSON path (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Euler–Maruyama noise ensemble: CSV of per-time statistics plus a
    /// fitted second-moment slope report.
    Noise {
        #[arg(long)]
        config: PathBuf,
        /// Ensemble CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Slope report JSON path (defaults to stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Re-run at dt/2 and require slope agreement.
        #[arg(long)]
        dt_check: bool,
    },
    /// Run randomized verification suites; nonzero exit iff any
    /// non-vacuous check fails.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Substring filter on suite names (pathwise | gains | limit-oracle).
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        instances: Option<usize>,
        /// Report JSON path (defaults to stdout summary only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let timestamp = !cli.no_timestamp;
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            summary,
            t,
            samples,
            rel_tol,
            abs_tol,
        } => output::cmd_simulate(
            &config,
            &out,
            summary.as_deref(),
            output::SimulateOverrides {
                t,
                samples,
                rel_tol,
                abs_tol,
            },
            timestamp,
        ),
        Command::Certify { config, out } => output::cmd_certify(&config, out.as_deref(), timestamp),
        Command::Noise {
            config,
            out,
            report,
            dt,
            paths,
            seed,
            dt_check,
        } => output::cmd_noise(
            &config,
            &out,
            report.as_deref(),
            output::NoiseOverrides {
                dt,
                paths,
                seed,
                dt_check,
            },
            timestamp,
        ),
        Command::Verify {
            config,
            suite,
            seed,
            instances,
            out,
        } => output::cmd_verify(
            config.as_deref(),
            suite.as_deref(),
            seed,
            instances,
            out.as_deref(),
            timestamp,
        ),
    };
    match result {
        Ok(checks_failed) => {
            if checks_failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Schema(_) | Error::InvalidInput(_) => 2,
        Error::Evaluation(_) | Error::StepSizeUnderflow { .. } | Error::SaddleNotFound(_) => 3,
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("SADDLEFLOW_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}
