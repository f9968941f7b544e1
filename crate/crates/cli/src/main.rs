//! `htkg`: build, sample, inspect, train and evaluate hyper-relational
//! temporal KG link predictors.
//!
//! Exit codes: 0 success, 1 user error, 2 internal error.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use htkg_core::HtkgError;

use settings::{ModelFlags, TrainFlags};

/// Bad input from the user (flags, files, settings).
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

#[derive(Parser, Debug)]
#[command(
    name = "htkg",
    version,
    about = "Link prediction over hyper-relational temporal knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a benchmark from quadruple files plus Wikidata claims.
    Build(BuildArgs),
    /// Draw a (100)/(66)/(33) proportion dataset or thin out qualifiers.
    Sample(SampleArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Filtered ranking of a checkpoint on one split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a toy graph.
    Gradcheck(GradcheckArgs),
    /// Write matcher weights and TI neighbors per query as JSON.
    DumpAttention(DumpArgs),
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Directory with train.txt, valid.txt and test.txt quadruples.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Recorded API responses; defaults to $HTKG_FIXTURE_DIR.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Query the live API (recording into the fixture directory if one is set).
    #[arg(long)]
    pub live: bool,
    #[arg(long, default_value = htkg_core::bench_builder::DEFAULT_ENDPOINT)]
    pub endpoint: String,
    /// Relation vocabulary of the source: `yago` or `none` (already Wikidata ids).
    #[arg(long, default_value = "none")]
    pub mapping: String,
    /// Merge and re-split the source keeping its split proportions.
    #[arg(long)]
    pub redistribute: bool,
    /// Skip TI fact mining.
    #[arg(long)]
    pub no_ti: bool,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target share of qualifier-bearing facts: 100, 66 or 33.
    #[arg(long)]
    pub percent: Option<u32>,
    /// Keep this fraction of all qualifiers.
    #[arg(long)]
    pub qualifier_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub data: PathBuf,
    /// Checkpoint and metrics directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write the report as JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include one record per query in the JSON report.
    #[arg(long)]
    pub per_query: bool,
    #[arg(long)]
    pub filter_qualifiers: Option<bool>,
    #[arg(long)]
    pub max_queries: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub entities: usize,
    #[arg(long, default_value_t = 15)]
    pub facts: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Check at most this many coordinates per tensor.
    #[arg(long)]
    pub max_coords: Option<usize>,
    /// Write the per-tensor report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Number of queries to dump.
    #[arg(long, default_value_t = 20)]
    pub limit: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UserError>() {
            return 1;
        }
        if let Some(h) = cause.downcast_ref::<HtkgError>() {
            return match h {
                HtkgError::Parse { .. }
                | HtkgError::EmptySplit(_)
                | HtkgError::IdOverflow(_)
                | HtkgError::DuplicateVocab(_)
                | HtkgError::Unreachable(_)
                | HtkgError::Invalid(_)
                | HtkgError::UnmappedRelations(_)
                | HtkgError::FixtureMissing(_)
                | HtkgError::Checkpoint(_) => 1,
                HtkgError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Sample(a) => commands::sample(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::DumpAttention(a) => commands::dump_attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
