mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use purs_core::engine::{EngineError, Variant};
use thiserror::Error;

pub const OUT_DIR_ENV: &str = "PURS_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Data(#[from] purs_core::data::DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::State(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "purs",
    version,
    about = "Unexpectedness-aware recommender: train, evaluate and inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration; defaults apply to every missing key
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model variant: FULL, V1 .. V5 or the full names
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// List length for recommendations and list metrics
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Joint training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Output directory (overrides the environment and the config file)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the interaction log and write the canonical event file
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Train one variant and write its checkpoint and epoch log
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score the held-out split with a trained checkpoint
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load instead of `<out>/model.ckpt`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Print the aligned text table instead of JSON
        #[arg(long)]
        table: bool,
    },
    /// Train and evaluate all six variants and print the comparison table
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Top-k unseen items for one user
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Dump interest clusters as JSON lines
    Clusters {
        #[command(flatten)]
        common: Common,
        /// Only this user; every user when absent
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { common } => commands::ingest(&commands::resolve(&common)?),
        Command::Train { common } => commands::train(&commands::resolve(&common)?),
        Command::Evaluate {
            common,
            checkpoint,
            table,
        } => commands::evaluate(&commands::resolve(&common)?, checkpoint, table),
        Command::Ablate { common } => commands::ablate(&commands::resolve(&common)?),
        Command::Recommend {
            common,
            user,
            checkpoint,
        } => commands::recommend(&commands::resolve(&common)?, checkpoint, &user),
        Command::Clusters {
            common,
            user,
            checkpoint,
        } => commands::clusters(&commands::resolve(&common)?, checkpoint, user.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {line}");
            ExitCode::from(e.exit_code())
        }
    }
}
