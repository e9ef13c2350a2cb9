//! Command-line driver for the tilting laboratory.
//!
//! Every subcommand resolves one [`config::ExperimentConfig`] (defaults,
//! then the `--config` file, then flags), runs deterministically from the
//! master `--seed`, and writes its artifacts plus a `manifest.json` with
//! the resolved configuration into `--out`. Rerunning a subcommand with
//! the same configuration and seed reproduces every output byte for byte.
//!
//! Exit codes: 0 on success, 1 for invalid flags or configuration, 2 for
//! runtime failures (I/O, corrupt artifacts, diverged training).

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use exp_rsft::train::Algorithm;
use exp_rsft::{Error, Result};

use crate::commands::{BoundMode, TrainKind};
use crate::config::{ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(
    name = "exp-rsft",
    version,
    about = "Train, tilt and stress-test contextual-bandit recommenders"
)]
struct Cli {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for run artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Exponential-weight temperature.
    #[arg(long, global = true, value_name = "X")]
    lambda: Option<f64>,
    /// Training algorithm.
    #[arg(long, global = true, value_enum, value_name = "NAME")]
    algo: Option<CliAlgo>,
    /// Comma-separated temperature grid.
    #[arg(long, global = true, value_delimiter = ',', value_name = "A,B,C")]
    grid: Option<Vec<f64>>,
    /// Training epochs.
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,
    /// Relevance threshold for test cases (and the rating threshold when
    /// ingesting ratings data).
    #[arg(long, global = true, value_name = "X")]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

/// Algorithms `train` accepts. The supervised three map onto the library's
/// weighting modes; `ppo` and `dpo` instead train a reward model on the
/// dataset and optimize the policy against it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliAlgo {
    Bc,
    Rsft,
    ExpRsft,
    Ppo,
    Dpo,
}

impl CliAlgo {
    /// The supervised weighting mode, when this is one.
    fn supervised(self) -> Option<Algorithm> {
        match self {
            CliAlgo::Bc => Some(Algorithm::Bc),
            CliAlgo::Rsft => Some(Algorithm::Rsft),
            CliAlgo::ExpRsft => Some(Algorithm::ExpRsft),
            CliAlgo::Ppo | CliAlgo::Dpo => None,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic environment and save it as JSON.
    GenEnv,
    /// Draw a logged dataset and test cases from an environment.
    GenData,
    /// Convert a ratings file (user::item::rating::timestamp lines) into
    /// a dataset directory with leave-one-out test cases.
    IngestMovielens {
        /// Ratings file; `::` or comma separated.
        path: PathBuf,
    },
    /// Train a policy on the dataset (see --algo).
    Train,
    /// Train one exponentially weighted run per grid temperature on the
    /// shipped noisy benchmark, plus a cloning reference run.
    SweepLambda,
    /// Check one family of policy-improvement guarantees numerically.
    VerifyBounds {
        #[arg(value_enum)]
        mode: BoundMode,
    },
    /// Rank held-out cases with a saved policy checkpoint.
    Eval {
        /// Policy checkpoint directory.
        checkpoint: PathBuf,
    },
    /// Fit a reward model and compare it against mean-rating predictors.
    RmBaselines,
    /// Run the shipped reward-model over-optimization benchmark.
    HackDemo,
}

fn main() {
    env_logger::init();
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests land here too; only real parse
            // errors (which clap routes to stderr) are failures.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// 1 for problems in what the user asked for, 2 for failures while doing it.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) | Error::Support(_) | Error::Parse { .. } | Error::EmptyTestSet => 1,
        Error::NonFiniteWeight { .. } | Error::Diverged { .. } | Error::Io(_) | Error::Json(_) => 2,
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let flags = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        lambda: cli.lambda,
        algo: cli.algo.and_then(CliAlgo::supervised),
        grid: cli.grid.clone(),
        epochs: cli.epochs,
        threshold: cli.threshold,
    };
    let cfg = base.resolve(&flags);
    match &cli.command {
        Command::GenEnv => commands::gen_env(&cfg),
        Command::GenData => commands::gen_data(&cfg),
        Command::IngestMovielens { path } => commands::ingest(&cfg, path),
        Command::Train => {
            let kind = match cli.algo {
                Some(CliAlgo::Ppo) => TrainKind::Ppo,
                Some(CliAlgo::Dpo) => TrainKind::Dpo,
                _ => TrainKind::Supervised,
            };
            commands::train(&cfg, kind)
        }
        Command::SweepLambda => commands::sweep(&cfg, &flags),
        Command::VerifyBounds { mode } => commands::verify(&cfg, *mode, &flags),
        Command::Eval { checkpoint } => commands::eval(&cfg, checkpoint),
        Command::RmBaselines => commands::rm_baselines(&cfg),
        Command::HackDemo => commands::hack_demo(&cfg),
    }
}

fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|err| {
        Error::Parameter(format!("cannot read config {}: {err}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|err| {
        Error::Parameter(format!("cannot parse config {}: {err}", path.display()))
    })
}
