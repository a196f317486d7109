// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxrec::cf::CoOccurrenceUnit;
use ctxrec::{Algorithm, Strategy};

#[derive(Debug, Parser)]
#[command(
    name = "ctxrec",
    version,
    about = "Context-aware top-N recommendation with virtual items"
)]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "CTXREC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an access log (and optional item catalog) into a dataset file.
    Ingest(IngestArgs),
    /// Run one strategy and write JSON Lines and CSV reports.
    Evaluate(EvaluateArgs),
    /// Baseline plus one run per dimension on a shared split.
    Sweep(SweepArgs),
    /// Strategy comparison table over datasets and algorithms.
    Compare(CompareArgs),
    /// Train a model on a whole dataset and save it.
    Train(TrainArgs),
    /// Print the top-N items for a session from a saved model.
    Recommend(RecommendArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Access log CSV: session_id,user_id,item_id[,timestamp][,ctx_<dim>...]
    #[arg(long)]
    pub log: PathBuf,
    /// Item catalog CSV: item_id,attribute,value
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Split each user's accesses into sessions at gaps longer than this
    /// many seconds instead of using the session_id column.
    #[arg(long)]
    pub session_gap: Option<i64>,
    /// Offset in seconds added to timestamps before deriving temporal context.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub utc_offset: i64,
    /// Where to write the normalized dataset (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Unit {
    Session,
    User,
}

impl From<Unit> for CoOccurrenceUnit {
    fn from(unit: Unit) -> Self {
        match unit {
            Unit::Session => CoOccurrenceUnit::Session,
            Unit::User => CoOccurrenceUnit::User,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Average only the k most similar observables (CF).
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Co-occurrence unit for CF similarities.
    #[arg(long, value_enum, default_value_t = Unit::Session)]
    pub unit: Unit,
    /// Override the data-driven minimum support (AR).
    #[arg(long)]
    pub min_support: Option<f64>,
    /// Override the data-driven minimum confidence (AR).
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Abort AR training beyond this many frequent itemsets.
    #[arg(long, default_value_t = ctxrec::ar::DEFAULT_MAX_ITEMSETS)]
    pub max_itemsets: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Dataset written by `ingest`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_algorithm)]
    pub algorithm: Algorithm,
    /// Candidate dimensions, comma separated; defaults to every registered one.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<String>,
    /// Largest list length reported; lengths 1..=N are evaluated.
    #[arg(short = 'N', long = "n-max", default_value_t = 10)]
    pub n_max: usize,
    /// List length used by selection strategies.
    #[arg(long, default_value_t = 1)]
    pub n_select: usize,
    /// Fraction of sessions used for training.
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    /// Fraction of the training sessions held out for selection.
    #[arg(long, default_value_t = ctxrec::strategies::DEFAULT_VALIDATION_FRACTION)]
    pub validation: f64,
    /// Smallest segment trained by Combined Reduction.
    #[arg(long, default_value_t = ctxrec::strategies::DEFAULT_MIN_SEGMENT_SESSIONS)]
    pub min_segment: usize,
    /// Average metrics per user rather than per test session.
    #[arg(long)]
    pub per_user: bool,
    /// Seed for the split, the hidden items and the validation carve-out.
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// baseline, single:<dim>, best, forward, all or combined.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// Directory for report.jsonl and report.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Directory for sweep.jsonl and sweep.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Datasets as `label=path`; repeat for several.
    #[arg(long = "dataset", value_parser = parse_labelled, required = true)]
    pub datasets: Vec<(String, PathBuf)>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm, default_value = "cf,ar")]
    pub algorithms: Vec<Algorithm>,
    /// Candidate dimensions; defaults to every dimension of each dataset.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub n_select: usize,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Where to write the comparison CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_algorithm)]
    pub algorithm: Algorithm,
    /// Dimensions injected as virtual items.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<String>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Items seen in the active session, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub items: Vec<String>,
    /// Active context as `dim=value`; repeat for several.
    #[arg(long = "context", value_parser = parse_context)]
    pub context: Vec<(String, String)>,
    #[arg(short = 'N', default_value_t = 10)]
    pub n: usize,
    /// Average only the k most similar observables (CF models).
    #[arg(long)]
    pub neighbors: Option<usize>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: ctxrec::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: ctxrec::Error| e.to_string())
}

fn parse_labelled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_owned(), PathBuf::from(path))),
        _ => Err(format!("expected label=path, got `{s}`")),
    }
}

fn parse_context(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((dim, value)) if !dim.is_empty() && !value.is_empty() => Ok((dim.to_owned(), value.to_owned())),
        _ => Err(format!("expected dim=value, got `{s}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn context_flags_split_at_the_first_equals() {
        assert_eq!(parse_context("q=a=b").unwrap(), ("q".to_owned(), "a=b".to_owned()));
        assert!(parse_context("day").is_err());
        assert!(parse_labelled("=x").is_err());
    }
}
