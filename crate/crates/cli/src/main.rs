//! `underdamp`: run, sweep, audit and compare accelerated methods and their
//! ODE models from the command line.
//!
//! Exit codes: 0 on success, 1 on configuration or runtime errors, 2 when a
//! requested certificate fails. Errors are reported on one stderr line
//! starting with `error:`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{cmd_audit, cmd_compare, cmd_rates, cmd_run, cmd_sweep, KindArg, RatesRequest, Status};
use config::{resolve, ExperimentArgs};
use underdamp::diagnostics::RateBound;

#[derive(Parser)]
#[command(name = "underdamp", version, about = "Accelerated gradient experiments across the momentum family")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method and write its trajectory CSV and summary JSON
    Run(ExperimentArgs),
    /// Run one discrete method over a list of r values
    Sweep(SweepArgs),
    /// Recompute a run and audit its Lyapunov function
    Audit(AuditArgs),
    /// Compare NAG with the low- and high-resolution ODEs under t = k√s
    Compare(CompareArgs),
    /// Rate certificates for an existing trajectory CSV
    Rates(RatesArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated r values
    #[arg(long = "r-values", value_delimiter = ',', allow_hyphen_values = true)]
    r_values: Vec<f64>,
    /// Iterations at which gap and min_grad_sq are collected
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    checkpoints: Vec<u64>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Audit kind; inferred from the method and r when omitted
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Recorded trajectory to cross-check against the recomputation
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long)]
    k_max: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Nag,
    Fista,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    r: f64,
    #[arg(long)]
    s: f64,
    /// Threshold iteration; computed from r when omitted
    #[arg(long)]
    k0: Option<u64>,
    #[arg(long, value_enum, default_value = "nag")]
    bound: BoundArg,
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(command: Command) -> Result<Status, String> {
    match command {
        Command::Run(args) => cmd_run(&resolve(&args)?),
        Command::Sweep(args) => cmd_sweep(&resolve(&args.experiment)?, &args.r_values, &args.checkpoints),
        Command::Audit(args) => cmd_audit(&resolve(&args.experiment)?, args.kind, args.csv.as_deref()),
        Command::Compare(args) => {
            let cfg = resolve(&args.experiment)?;
            let k_max = args.k_max.or(cfg.k_max).unwrap_or(200);
            cmd_compare(&cfg, k_max)
        }
        Command::Rates(args) => cmd_rates(&RatesRequest {
            csv: &args.csv,
            r: args.r,
            s: args.s,
            k0: args.k0,
            bound: match args.bound {
                BoundArg::Nag => RateBound::Nag,
                BoundArg::Fista => RateBound::Fista,
            },
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", one_line(first.trim_start_matches("error:")));
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CertificateFailed(what)) => {
            eprintln!("error: certificate failed: {}", one_line(&what));
            ExitCode::from(2)
        }
        Err(msg) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(1)
        }
    }
}
