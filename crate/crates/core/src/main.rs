//! `leafcast` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use leafcast::config::RunConfig;
use leafcast::pipeline::{self, PipelineError, CHECKPOINT_FILE};

#[derive(Parser)]
#[command(
    name = "leafcast",
    version,
    about = "Leaf-fall prediction pipeline: ingest, train, tune, evaluate",
    propagate_version = true
)]
struct Cli {
    /// TOML config file with flat dotted keys (defaults apply when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum concurrent tuner trials; overrides the config file.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset at the configured input paths.
    Synth,
    /// Parse inputs and export daily labeled leaf-fall series.
    Ingest,
    /// Assemble, scale and window the feature table; export it with a manifest.
    BuildDataset,
    /// Train the configured model; write a checkpoint and epoch metrics.
    Train,
    /// Hyperband hyperparameter search; write the report and best checkpoint.
    Tune,
    /// Evaluate a checkpoint on the holdout tree; write all reports.
    Evaluate {
        /// Checkpoint path (defaults to <out>/model.ckpt).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Predict per-day leaf-fall labels for every tree.
    Predict {
        /// Checkpoint path (defaults to <out>/model.ckpt).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.apply_overrides(cli.seed, cli.jobs, cli.out.as_deref());

    let default_checkpoint = || config.paths.out_dir.join(CHECKPOINT_FILE);
    match cli.command {
        Command::Synth => pipeline::cmd_synth(&config),
        Command::Ingest => pipeline::cmd_ingest(&config),
        Command::BuildDataset => pipeline::cmd_build_dataset(&config),
        Command::Train => pipeline::cmd_train(&config),
        Command::Tune => pipeline::cmd_tune(&config),
        Command::Evaluate { checkpoint } => {
            pipeline::cmd_evaluate(&config, &checkpoint.unwrap_or_else(default_checkpoint))
        }
        Command::Predict { checkpoint } => {
            pipeline::cmd_predict(&config, &checkpoint.unwrap_or_else(default_checkpoint))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
