//! `causeway` command-line tool: corpus statistics, n-gram mining, training,
//! evaluation, extraction and ablation runs driven by one TOML run file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use causeway::corpus::CorpusFormat;
use causeway::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "causeway",
    version,
    about = "Cause/effect span extraction toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config; default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Corpus format: jsonl or conll-tsv (overrides the config).
    #[arg(long, global = true)]
    pub format: Option<CorpusFormat>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics.
    Stats {
        /// Corpus file (default: data.corpus or data.train from the config).
        corpus: Option<PathBuf>,
    },
    /// Rank, embed and cluster cause/effect n-grams into a filter plan.
    Mine {
        /// Corpus to mine in full (default: the training split from the config).
        corpus: Option<PathBuf>,
        /// N-gram sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<usize>>,
        /// Share of ranked n-grams kept per role.
        #[arg(long)]
        fraction: Option<f64>,
        /// Ranking smoothing constant.
        #[arg(long)]
        b: Option<f64>,
        /// Clusters per pool.
        #[arg(long)]
        k: Option<usize>,
        /// Share of filters per window taken from centroids.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Train a tagger and write the best checkpoint and convergence log.
    Train,
    /// Evaluate a checkpoint on an annotated corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file (default: data.test from the config).
        corpus: Option<PathBuf>,
    },
    /// Tag raw text, one whitespace-tokenized sentence per line.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
    /// Full model against each single-component ablation.
    Ablate {
        /// Seeds, comma separated (default: ablation.seeds).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Every configuration problem found.
    Config(Vec<String>),
    /// A checkpoint or plan that does not fit the requested model.
    Mismatch(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Mismatch(_) => 4,
            CliError::Core(e) => match e.root() {
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::InvalidRecords(_)
                | Error::InvalidBio { .. }
                | Error::InvalidInput(_)
                | Error::TooLong { .. } => 2,
                Error::Knowledge(_) => 3,
                Error::Checkpoint(_) | Error::Shape(_) => 4,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Config(problems) => {
                write!(f, "invalid configuration:")?;
                for p in problems {
                    write!(f, "\n  {p}")?;
                }
                Ok(())
            }
            CliError::Mismatch(m) => write!(f, "model mismatch: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
