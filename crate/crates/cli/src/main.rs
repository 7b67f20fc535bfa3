//! `ccol`: build datasets, train the curriculum stages, evaluate checkpoints
//! and separate user recordings.

mod context;
mod dataset;
mod eval;
mod plot;
mod separate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use ccol_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ccol", version, about = "Cyclic co-learning of sounding-object grounding and sound separation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Config file (TOML, or JSON by extension) layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset: default, desk, paper or bench.
    #[arg(long, global = true, default_value = "default")]
    preset: String,
    /// Dotted-key override, e.g. `--set train.batch_size=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, env = "CCOL_OUT", default_value = "ccol-out")]
    out: PathBuf,
    /// Worker threads for per-sample gradient computation.
    #[arg(long, global = true, env = "CCOL_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train/val/test manifests (synthetic, or ingested external data).
    Dataset(dataset::DatasetArgs),
    /// Train one curriculum stage of one mode.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(eval::EvalArgs),
    /// Ground and separate the objects of one recording.
    Separate(separate::SeparateArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Staging(_) => 3,
        Error::Numerical(_) => 4,
        Error::Ingestion { .. } | Error::Input(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ccol_core::trainer::set_workers(cli.global.workers);
    let result = match cli.command {
        Command::Dataset(a) => dataset::run(&cli.global, a),
        Command::Train(a) => train::run(&cli.global, a),
        Command::Eval(a) => eval::run(&cli.global, a),
        Command::Separate(a) => separate::run(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
