//! Command-line front end for the block covariance model with structured
//! sparsity: fitting, tuning, stability analysis, data generation and the
//! standalone projection utility.

mod commands;
mod config;
mod io;
mod manifest;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rgcca::Error;

#[derive(Debug, Parser)]
#[command(name = "rgcca", version, about = "Regularised multi-block covariance analysis")]
struct Cli {
    /// Worker threads for tuning cells and resampling rounds.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model to a set of block data files.
    Fit(commands::fit::FitArgs),
    /// Generate a synthetic two-block data set with known weights.
    Simulate(commands::simulate::SimulateArgs),
    /// Grid search over penalty strengths by cross-validated prediction.
    Cv(commands::cv::CvArgs),
    /// Selection stability under row resampling.
    Bootstrap(commands::bootstrap::BootstrapArgs),
    /// Project a vector onto an l1 ball, a quadratic ball or their
    /// intersection.
    Project(commands::project::ProjectArgs),
}

/// Bad inputs exit with 1, numeric failures and non-convergence with 2.
fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::RowMismatch { .. }
        | Error::Shape { .. }
        | Error::Config { .. }
        | Error::UnsupportedScheme { .. } => 1,
        Error::ZeroConstraintMatrix { .. }
        | Error::Svd(_)
        | Error::NewtonStalled { .. }
        | Error::PowerIteration { .. }
        | Error::NonFinite { .. }
        | Error::Evaluation { .. } => 2,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        std::process::exit(1);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .ok();

    let result = match &cli.command {
        Command::Fit(args) => commands::fit::run(args, cli.jobs),
        Command::Simulate(args) => commands::simulate::run(args, cli.jobs),
        Command::Cv(args) => commands::cv::run(args, cli.jobs),
        Command::Bootstrap(args) => commands::bootstrap::run(args, cli.jobs),
        Command::Project(args) => commands::project::run(args, cli.jobs),
    };

    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
