use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::ConfigArgs;

/// Row-less universal schema: train and evaluate knowledge-base completion
/// models whose rows are built from their observed columns.
#[derive(Debug, Parser)]
#[command(name = "uschema", version)]
struct Cli {
    /// Log progress (per-epoch loss and validation metric) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a planted block matrix as a triple file plus its ground truth.
    Synth(SynthArgs),
    /// Filter a triple file and write the vocabulary and surviving triples.
    Ingest(IngestArgs),
    /// Train a model and write a run directory.
    Train(ConfigArgs),
    /// Evaluate a trained run on one of its splits.
    Eval(EvalArgs),
    /// Score a (row, column) cell, or list a row's best columns.
    Predict(PredictArgs),
    /// Show which observed columns drove a prediction.
    Explain(ExplainArgs),
    /// Print parameter counts per table.
    Summary(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub rows: usize,
    #[arg(long, default_value_t = 20)]
    pub cols: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of each block's columns emitted as TEXT patterns.
    #[arg(long, default_value_t = 0.5)]
    pub text_fraction: f64,
    /// Triple file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth block file; defaults to `<out>.blocks.tsv`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for `vocab/` and `triples.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// seen | unseen | validation | test
    #[arg(long, default_value = "seen")]
    pub split: String,
    /// Checkpoint directory; defaults to `<run-dir>/checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub row: String,
    /// Column to score; without it the row's top KB columns are listed.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub row: String,
    #[arg(long)]
    pub column: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Summary(a) => commands::summary(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for usage, configuration and checkpoint problems, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    use uschema::Error;
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Checkpoint(_) | Error::UnsupportedExplain(_)) => 2,
        _ => 1,
    }
}
