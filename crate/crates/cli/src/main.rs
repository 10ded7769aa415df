mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bayesian latent-class meta-analysis of dichotomous and ordinal diagnostic
/// tests.
#[derive(Debug, Parser)]
#[command(name = "mvplc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write draws, diagnostics and summaries.
    Fit(FitArgs),
    /// Simulate a dataset from known parameters.
    Simulate(SimulateArgs),
    /// Compare fitted models by PSIS-LOO.
    Loo(LooArgs),
    /// Posterior predictive checks on correlations and cell counts.
    Ppc(PpcArgs),
    /// Recompute accuracy summaries from saved draws.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Recode an ordinal test as dichotomous before fitting, `test:k`.
    #[arg(long)]
    dichotomise: Option<String>,
    /// Joint-testing estimand `t,u,k,l,BTN|BTP`; repeatable.
    #[arg(long)]
    joint: Vec<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

/// A fitted run, named by its config file or by its output directory.
#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
struct RunArgs {
    /// Config of a completed fit; repeatable for `loo`.
    #[arg(long)]
    config: Vec<PathBuf>,
    /// Output directory of a completed fit; repeatable for `loo`.
    #[arg(long)]
    run: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct LooArgs {
    #[command(flatten)]
    runs: RunArgs,
    /// Directory for `loo.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PpcArgs {
    #[command(flatten)]
    runs: RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replicated datasets, overriding `[output] ppc_replicates`.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[command(flatten)]
    runs: RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    joint: Vec<String>,
    /// Include per-study accuracy.
    #[arg(long)]
    studies: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Loo(a) => commands::loo(a),
        Command::Ppc(a) => commands::ppc(a),
        Command::Summarize(a) => commands::summarize(a),
    };
    match result {
        Ok(commands::Outcome::Passed) => ExitCode::SUCCESS,
        Ok(commands::Outcome::GatesFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
