//! Command-line entry point: dataset generation, training, capacity
//! reporting, bound computation, theory certification and run summaries.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 certification
//! violation from `verify`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::exit;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "deeponet",
    version,
    about = "DeepONet training, capacity measures and Rademacher-bound certification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory for artifacts and the config echo.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// JSON config file with flat dotted keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; all randomness derives from it through named streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on worker threads (results are identical at any value).
    #[arg(long)]
    threads: Option<usize>,
    /// Override a config key (repeatable), e.g. --set train.lr=0.01.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic operator dataset (JSON Lines).
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Task: pendulum | antiderivative.
        #[arg(long)]
        task: String,
        /// Number of samples.
        #[arg(long)]
        m: usize,
    },
    /// Train a DeepONet on generated datasets.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training dataset (JSONL from `generate`).
        #[arg(long = "train")]
        train_path: PathBuf,
        /// Test dataset (JSONL from `generate`).
        #[arg(long = "test")]
        test_path: PathBuf,
    },
    /// Compute the capacity report of a checkpoint.
    Capacity {
        #[command(flatten)]
        common: CommonArgs,
        /// Model checkpoint (JSON).
        #[arg(long)]
        model: PathBuf,
    },
    /// Compute Rademacher and generalization bounds for a checkpoint.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        /// Dataset for the empirical bound and data-derived constants.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run certification suites; exits 2 on any violation.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// all | contraction | abs-sup | rank-one | peeling | inner-oracle
        /// | surrogate | dominance | scaling
        #[arg(long, default_value = "all")]
        suite: String,
        /// Force one artificial failing check (exercises the failure
        /// path and the exit code).
        #[arg(long, hide = true)]
        inject_failure: bool,
    },
    /// Summarize artifacts produced by the other subcommands.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding history.csv / capacity.json / bounds.json /
        /// verify.json / gap.json.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            exit(1);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    exit(code);
}

fn setup_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Generate { common, task, m } => {
            setup_threads(common.threads);
            commands::generate(&common, &task, m)?;
            Ok(0)
        }
        Command::Train { common, train_path, test_path } => {
            setup_threads(common.threads);
            commands::train(&common, &train_path, &test_path)?;
            Ok(0)
        }
        Command::Capacity { common, model } => {
            setup_threads(common.threads);
            commands::capacity(&common, &model)?;
            Ok(0)
        }
        Command::Bounds { common, model, data } => {
            setup_threads(common.threads);
            commands::bounds(&common, &model, data.as_deref())?;
            Ok(0)
        }
        Command::Verify { common, suite, inject_failure } => {
            setup_threads(common.threads);
            let all_passed = commands::verify(&common, &suite, inject_failure)?;
            Ok(if all_passed { 0 } else { 2 })
        }
        Command::Report { common, dir } => {
            commands::report(&common, &dir)?;
            Ok(0)
        }
    }
}
