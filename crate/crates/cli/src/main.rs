//! `milkit` command-line driver.
//!
//! Exit codes: 0 success, 2 usage/configuration/data error, 3 numerical
//! failure (training divergence).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use milkit::MilError;

#[derive(Debug, Parser)]
#[command(name = "milkit", version, about = "Multiple instance learning toolkit")]
#[command(
    after_help = "Any config key can be overridden with a dotted flag, e.g. --run.epochs=5.\n\
Relative dataset paths are resolved under $MILKIT_DATA_ROOT when it is set."
)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed (and dataset.synthetic.seed when present).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides output_dir.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Datagen,
    /// Train one model; writes a checkpoint and a run report.
    Train {
        /// Re-evaluate the checkpoint of a finished run instead of training.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        /// Checkpoint directory (default: <output_dir>/checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Processed dataset directory (default: the configured dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train and evaluate several models over k splits.
    Benchmark,
    /// Summarize a dataset directory, checkpoint directory or array file.
    Inspect { path: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|c| {
        c.downcast_ref::<MilError>()
            .is_some_and(MilError::is_numerical)
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn run(cli: Cli, overrides: &[config::Override]) -> anyhow::Result<()> {
    if let Command::Inspect { path } = &cli.command {
        return commands::inspect(path);
    }
    let cfg = config::load_config(
        cli.config.as_deref(),
        overrides,
        cli.seed,
        cli.output.as_deref(),
    )?;
    match &cli.command {
        Command::Datagen => commands::datagen(&cfg),
        Command::Train { resume } => commands::train_cmd(&cfg, *resume),
        Command::Eval {
            checkpoint,
            dataset,
        } => commands::eval_cmd(&cfg, checkpoint.as_deref(), dataset.as_deref()),
        Command::Benchmark => commands::benchmark_cmd(&cfg),
        Command::Inspect { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = match config::extract_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
