//! `taxograft`: seeded, config-driven runs of the taxonomy-expansion stages.
//! Exit codes: 0 success, 1 domain error, 2 usage error. Failures print one
//! machine-readable JSON line to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Domain { kind: &'static str, message: String },
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Domain { kind: "config", message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Domain { kind, .. } => kind,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain { .. } => 1,
        }
    }
}

macro_rules! domain_from {
    ($ty:ty, $kind:expr) => {
        impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::Domain { kind: $kind, message: err.to_string() }
            }
        }
    };
}

domain_from!(taxograft_core::TaxonomyError, "data");
domain_from!(taxograft_core::RankerError, "data");
domain_from!(taxograft_core::EvalError, "data");
domain_from!(taxograft_core::LlmError, "backend");
domain_from!(std::io::Error, "io");

impl From<taxograft_core::PipelineError> for CliError {
    fn from(err: taxograft_core::PipelineError) -> Self {
        let kind = match &err {
            taxograft_core::PipelineError::Backend(_) => "backend",
            taxograft_core::PipelineError::Io(_) => "io",
            _ => "data",
        };
        CliError::Domain { kind, message: err.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "taxograft", version, about = "Taxonomy expansion experiment harness")]
struct Cli {
    /// Flat key=value configuration file; flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// RNG seed; required by split, train, and expand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default "out").
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate taxonomy files and print node/edge/depth counts.
    Ingest,
    /// Hold out a seeded fraction of leaves as queries.
    Split,
    /// Fit the lineage ranker and save the model.
    Train,
    /// Rank every candidate parent per query and report Hit@k.
    Rank,
    /// Run the filter/retrieve/verify loop over all queries.
    Expand,
    /// Score a predictions file (accuracy, Wu&Palmer, optional Hit@k).
    Eval,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Split => "split",
            Command::Train => "train",
            Command::Rank => "rank",
            Command::Expand => "expand",
            Command::Eval => "eval",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    cfg.write_snapshot(cli.command.name())?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Split => commands::split(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Rank => commands::rank(&cfg),
        Command::Expand => commands::expand(&cfg),
        Command::Eval => commands::eval(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": err.to_string(), "kind": err.kind() })
            );
            ExitCode::from(err.exit_code())
        }
    }
}
