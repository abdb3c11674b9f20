//! `hyperx` command-line driver.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "hyperx", version, about = "Hypercomplex multimodal emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic raw dataset.
    Synth(commands::synth::SynthArgs),
    /// Filter, downsample and crop a raw dataset into a preprocessed one.
    Preprocess(commands::preprocess::PreprocessArgs),
    /// Train one or more models and write checkpoints and reports.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(commands::eval::EvalArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

/// Options shared by commands that accept a config file.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArg {
    /// JSON config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("HYPERX_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HYPERX_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Preprocess(a) => commands::preprocess::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hyperx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
