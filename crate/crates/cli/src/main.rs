//! `wdp`: train, evaluate, and sweep the privacy-protected transmission
//! system from the command line.
//!
//! Exit codes: 0 success, 2 config error (including bad flags), 3 missing
//! checkpoint artifacts, 4 numerical failure, 1 anything else.

mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wdp_core::pipeline::{run_baseline, run_eval, run_sweep, run_train, TrainMode};
use wdp_core::{Error, SweepReport};

use crate::config::{CommonArgs, Resolved};

#[derive(Parser)]
#[command(name = "wdp", version, about = "Privacy-budget sweeps for latent image transmission")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a protection/deprotection pair for every configured budget.
    Train(CommonArgs),
    /// Write per-image metrics per budget; trains missing checkpoints first.
    Eval(EvalArgs),
    /// Full run: all budgets plus the baseline, summarized in report.csv.
    Sweep(EvalArgs),
    /// Evaluate the unprotected link only.
    Baseline(CommonArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Fail with exit code 3 instead of training when checkpoints are absent.
    #[arg(long)]
    no_train: bool,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run() -> Result<(), CliError> {
    match Cli::parse().cmd {
        Cmd::Train(args) => {
            let r = prepare(&args)?;
            run_train(&r.cfg, &r.out, TrainMode::TrainIfMissing).map_err(CliError::Core)?;
            println!("checkpoints in {}", r.out.join("train").display());
            Ok(())
        }
        Cmd::Eval(args) => {
            let r = prepare(&args.common)?;
            let ckpt_dir = r.out.join("train");
            run_eval(&r.cfg, &r.out, &ckpt_dir, mode(args.no_train)).map_err(CliError::Core)?;
            println!("per-image metrics in {}", r.out.display());
            Ok(())
        }
        Cmd::Sweep(args) => {
            let r = prepare(&args.common)?;
            let report = run_sweep(&r.cfg, &r.out, mode(args.no_train)).map_err(CliError::Core)?;
            print_report(&report);
            println!("report at {}", r.out.join("report.csv").display());
            Ok(())
        }
        Cmd::Baseline(args) => {
            let r = prepare(&args)?;
            let report = run_baseline(&r.cfg, Some(&r.out)).map_err(CliError::Core)?;
            print_report(&report);
            println!("report at {}", r.out.join("baseline.csv").display());
            Ok(())
        }
    }
}

/// Resolves the config and writes the run manifests before any work starts,
/// so even a failed run records what it was asked to do.
fn prepare(args: &CommonArgs) -> Result<Resolved, CliError> {
    let env_out = std::env::var_os("WDP_OUT");
    let r = config::resolve(args, env_out.as_deref()).map_err(CliError::Config)?;
    config::write_manifests(&r)
        .map_err(|e| CliError::Other(format!("cannot write run manifests: {e}")))?;
    Ok(r)
}

fn mode(no_train: bool) -> TrainMode {
    if no_train {
        TrainMode::RequireCheckpoints
    } else {
        TrainMode::TrainIfMissing
    }
}

fn print_report(report: &SweepReport) {
    for row in &report.rows {
        if row.is_baseline {
            println!(
                "baseline      mse {:.6}  psnr {:.3}  match rate {:.3}",
                row.mse_bob,
                row.psnr_bob,
                1.0 - row.fppsr_bob
            );
        } else {
            println!(
                "eps {:>7}  eps' {:>12.3}  mse bob/eve {:.6}/{:.6}  fppsr bob/eve {:.3}/{:.3}",
                row.epsilon,
                row.epsilon_prime,
                row.mse_bob,
                row.mse_eve,
                row.fppsr_bob,
                row.fppsr_eve
            );
        }
    }
}

enum CliError {
    Config(String),
    Core(Error),
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(Error::MissingCheckpoints { .. }) => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Other(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}
