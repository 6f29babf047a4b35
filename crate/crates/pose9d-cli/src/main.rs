//! Command-line runner for the 9-DoF pose toolkit.
//!
//! Exit codes: 0 success, 2 schema error (malformed config or scene file),
//! 3 invariant violation (well-formed input breaking a domain contract),
//! 4 internal/io failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pose9d::error::Error;

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "pose9d", version, about = "Category-level 9-DoF pose toolkit")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (overrides the config; default: available parallelism).
    /// Results are independent of the thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate predictions against ground truth (mAP + pose accuracy).
    Evaluate {
        /// Newline-delimited scene records.
        #[arg(long)]
        scenes: PathBuf,
        /// Write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve per-scene bipartite matching and dump per-pair cost breakdowns.
    Match {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Re-derive 2D boxes from cuboids even where boxes already exist.
        #[arg(long)]
        overwrite_boxes: bool,
    },
    /// Generate a deterministic synthetic scene file.
    Synth {
        /// Number of scenes.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Override the generation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run matching, then report the training-loss breakdown per scene.
    Losses {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite_boxes: bool,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Schema { .. } => 2,
        Error::Io(_) => 4,
        _ => 3,
    }
}

#[cfg(feature = "parallel")]
fn init_thread_pool(threads: Option<usize>) -> Result<(), Error> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invariant {
                context: "threads".into(),
                message: e.to_string(),
            })?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool(_threads: Option<usize>) -> Result<(), Error> {
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    init_thread_pool(cli.threads.or(config.threads))?;

    match &cli.command {
        Command::Evaluate { scenes, out } => {
            commands::cmd_evaluate(&config, scenes, out.as_deref())
        }
        Command::Match {
            scenes,
            out,
            overwrite_boxes,
        } => commands::cmd_match(&config, scenes, out.as_deref(), *overwrite_boxes),
        Command::Synth { count, out, seed } => {
            commands::cmd_synth(&config, *count, out, *seed)
        }
        Command::Losses {
            scenes,
            out,
            overwrite_boxes,
        } => commands::cmd_losses(&config, scenes, out.as_deref(), *overwrite_boxes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
