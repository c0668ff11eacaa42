//! `crfid`: generate datasets, train and evaluate models, predict and
//! summarise reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "crfid", version, about = "Chipless RFID signature pipeline")]
struct Cli {
    /// TOML file with optional [generator] and [pipeline] tables.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; overrides the seeds in the config file.
    #[arg(long, global = true, env = "CRFID_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise a labelled dataset CSV.
    Generate(GenerateArgs),
    /// Train one model on one task and evaluate it on the held-out split.
    Train(TrainArgs),
    /// Apply a saved model to dataset rows or a Touchstone triple.
    Predict(PredictArgs),
    /// Merge evaluation reports into a summary table and per-case matrices.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Fraction of the 20 readings per group to keep, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write Touchstone triples for the first N rows.
    #[arg(long, value_name = "N", default_value_t = 0)]
    s2p: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// id or sensing.
    #[arg(long)]
    task: String,
    /// svr, dt, rf, gbt, cnn1, cnn2, cnn3 or cnn4.
    #[arg(long)]
    model: String,
    /// Maximum CNN epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long = "model-file", value_name = "FILE")]
    model_file: PathBuf,
    /// Dataset CSV with ground truth.
    #[arg(long, conflicts_with = "s2p", required_unless_present = "s2p")]
    data: Option<PathBuf>,
    /// Tag, isolation and reference `.s2p` files.
    #[arg(long, num_args = 3, value_names = ["TAG", "ISO", "REF"])]
    s2p: Option<Vec<PathBuf>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report CSVs written by `train`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
