mod common;
mod eval;
mod gen_data;
mod rotate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rcm", version, about = "Camera-controlled character rotation with flow matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset shard of training samples
    GenData(gen_data::GenDataArgs),
    /// Train the denoiser (curriculum, joint ablation, or a single stage)
    Train(train::TrainArgs),
    /// Generate an orbit video from 1-4 condition images
    Rotate(rotate::RotateArgs),
    /// Score a model (or the oracle) on held-out characters
    Eval(eval::EvalArgs),
}

/// Options shared by commands that read the run configuration.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; unset fields take their defaults
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration field, e.g. --set stages.stage_i.steps=50 (repeatable)
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RCM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("RCM_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => gen_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Rotate(a) => rotate::run(a),
        Command::Eval(a) => eval::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR:Usage:{first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("ERROR:{}:{detail}", e.code());
            ExitCode::FAILURE
        }
    }
}
