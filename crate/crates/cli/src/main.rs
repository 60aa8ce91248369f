//! Batch command-line harness for joint ARD regression.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical
//! failure (or non-convergence under `--strict`).

mod commands;
mod config;
mod error;
mod io;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{FitArgs, Globals, SynthArgs};
use error::CliResult;

#[derive(Parser)]
#[command(name = "jointard", version, about = "Joint ARD regression: generate, fit, predict, evaluate, sweep, diagnose")]
struct Cli {
    /// JSON configuration (synthetic spec for `synth`, run config for `fit`, grid for `sweep`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, global = true, default_value = ".")]
    out: PathBuf,
    /// Treat non-convergence as a failure.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads for `sweep` (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelData {
    /// result.json written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic sparse regression problem: train.csv, test.csv, truth.json.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        sparsity: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Fit a model: result.json and trace.csv.
    Fit {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Predictive mean and variance per row: predictions.csv.
    Predict(ModelData),
    /// Hold-out metrics: metrics.json.
    Eval(ModelData),
    /// Recovery grid over synthetic problems: sweep.csv.
    Sweep,
    /// Per-sample residual, leverage and LOO diagnostics: diagnostics.csv.
    Diagnose {
        #[command(flatten)]
        io: ModelData,
        /// truth.json from `synth`, for the outlier column.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        strict: cli.strict,
        threads: cli.threads,
    };
    match cli.command {
        Command::Synth { n, d, sparsity, rho, sigma, m, n_test } => {
            commands::synth(&g, &SynthArgs { n, d, sparsity, rho, sigma, m, n_test })
        }
        Command::Fit { train, test } => commands::fit(&g, &FitArgs { train, test }),
        Command::Predict(a) => commands::predict(&g, &a.model, &a.data),
        Command::Eval(a) => commands::eval(&g, &a.model, &a.data),
        Command::Sweep => commands::sweep(&g),
        Command::Diagnose { io, truth } => commands::diagnose(&g, &io.model, &io.data, truth.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
