// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

mod args;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use ctxrec::ar::ArParams;
use ctxrec::cf::CfParams;
use ctxrec::davi::{augment_dataset, DaviConfig};
use ctxrec::domain::{build_dataset, BuildOptions, VirtualItemId};
use ctxrec::ingestion::{load_item_catalog, parse_access_log, Sessionization};
use ctxrec::report::{comparison_csv, write_csv, write_jsonl, ComparisonColumn, ReportHeader};
use ctxrec::{
    Averaging, Catalog, Dataset, DimensionRegistry, EngineParams, Experiment, Outcome, Recommender, Strategy,
    StrategyResult, TrainedModel,
};

use args::{
    Cli, Command, CompareArgs, EngineArgs, EvaluateArgs, ExperimentArgs, IngestArgs, RecommendArgs, SweepArgs,
    TrainArgs,
};

const EXIT_INPUT: u8 = 2;
const EXIT_RESOURCE: u8 = 3;

/// A run that completed but where at least one strategy hit a resource limit.
#[derive(Debug)]
struct ResourceAbort;

impl std::fmt::Display for ResourceAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("a strategy hit a resource limit; its cells are reported as `-`")
    }
}

impl std::error::Error for ResourceAbort {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {err}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let resource = err.is::<ResourceAbort>()
                || err.chain().any(|cause| {
                    cause
                        .downcast_ref::<ctxrec::Error>()
                        .is_some_and(ctxrec::Error::is_resource_limit)
                });
            ExitCode::from(if resource { EXIT_RESOURCE } else { EXIT_INPUT })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(args) => ingest(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Sweep(args) => sweep(args),
        Command::Compare(args) => compare(args),
        Command::Train(args) => train(args),
        Command::Recommend(args) => recommend(args),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let log = parse_access_log(open(&args.log)?).with_context(|| format!("reading {}", args.log.display()))?;
    for row in &log.row_errors {
        eprintln!("warning: {}:{}: {}", args.log.display(), row.line, row.message);
    }
    for warning in &log.warnings {
        eprintln!("warning: {}: {warning}", args.log.display());
    }
    let catalog = match &args.catalog {
        Some(path) => {
            let load = load_item_catalog(open(path)?).with_context(|| format!("reading {}", path.display()))?;
            for warning in &load.warnings {
                eprintln!("warning: {}: {warning}", path.display());
            }
            load.catalog
        }
        None => Catalog::new(),
    };
    if log.accesses.is_empty() {
        bail!("{} contains no valid accesses", args.log.display());
    }
    let registry = DimensionRegistry::infer(&log.accesses, &catalog)?;
    let options = BuildOptions {
        sessionization: match args.session_gap {
            Some(gap_seconds) => Sessionization::ByUserTimeout { gap_seconds },
            None => Sessionization::BySessionId,
        },
        utc_offset_seconds: args.utc_offset,
    };
    let (dataset, warnings) = build_dataset(&log.accesses, catalog, registry, &options)?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    let mut out = create(&args.out)?;
    serde_json::to_writer(&mut out, &dataset)?;
    out.flush()?;

    let stats = dataset.stats;
    println!("accesses        {}", stats.accesses);
    println!("distinct items  {}", stats.distinct_items);
    println!("users           {}", stats.distinct_users);
    println!("sessions        {}", dataset.sessions.len());
    println!(
        "dimensions      {}",
        dataset.dimensions.names().collect::<Vec<_>>().join(",")
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let dataset: Dataset =
        serde_json::from_reader(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    if !dataset.is_consistent() {
        bail!("{} is not a consistent dataset file", path.display());
    }
    Ok(dataset)
}

fn engine_params(args: &EngineArgs) -> EngineParams {
    EngineParams {
        cf: CfParams {
            unit: args.unit.into(),
            neighbors: args.neighbors,
        },
        ar: ArParams {
            min_support: args.min_support,
            min_confidence: args.min_confidence,
            max_itemsets: args.max_itemsets,
        },
    }
}

fn dims_or_all(dims: &[String], dataset: &Dataset) -> Vec<String> {
    if dims.is_empty() {
        dataset.dimensions.names().map(str::to_owned).collect()
    } else {
        dims.to_vec()
    }
}

fn experiment<'a>(args: &ExperimentArgs, dataset: &'a Dataset) -> Result<Experiment<'a>> {
    if args.n_max == 0 || args.n_select == 0 {
        bail!("list lengths must be at least 1");
    }
    if !(args.validation > 0.0 && args.validation < 1.0) {
        bail!("--validation must lie in (0, 1)");
    }
    let mut experiment = Experiment::new(dataset, args.algorithm, args.seed);
    experiment.params = engine_params(&args.engine);
    experiment.ns = 1..=args.n_max;
    experiment.n_select = args.n_select;
    experiment.averaging = if args.per_user {
        Averaging::PerUser
    } else {
        Averaging::PerCase
    };
    experiment.train_ratio = args.ratio;
    experiment.validation_fraction = args.validation;
    experiment.min_segment_sessions = args.min_segment;
    Ok(experiment)
}

fn write_reports(dir: &Path, stem: &str, header: &ReportHeader, results: &[StrategyResult]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut jsonl = create(&dir.join(format!("{stem}.jsonl")))?;
    write_jsonl(&mut jsonl, header, results)?;
    jsonl.flush()?;
    let mut csv = create(&dir.join(format!("{stem}.csv")))?;
    write_csv(&mut csv, results)?;
    csv.flush()?;
    Ok(())
}

fn header(experiment: &Experiment<'_>, split_digest: String) -> ReportHeader {
    ReportHeader {
        seed: experiment.seed,
        split_digest,
        algorithm: experiment.algorithm,
        train_ratio: experiment.train_ratio,
        n_select: experiment.n_select,
    }
}

fn summarize(result: &StrategyResult) {
    match &result.outcome {
        Outcome::Report(report) => {
            let first = &report.rows[0];
            println!(
                "{:<12} dims [{}]  F1@{} {:.4}  recall {:.4}  precision {:.4}  ({} cases, {} skipped)",
                result.strategy.to_string(),
                result.dims.join(","),
                first.n,
                first.f1,
                first.recall,
                first.precision,
                report.cases,
                report.skipped
            );
        }
        Outcome::Aborted(reason) => println!(
            "{:<12} dims [{}]  -  ({reason})",
            result.strategy.to_string(),
            result.dims.join(",")
        ),
    }
    for (label, score) in &result.selection {
        println!("  validation {label:<20} F1 {score:.4}");
    }
    for (segment, score) in &result.segments {
        println!("  segment    {:<20} F1 {score:.4}", segment.to_string());
    }
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let dataset = load_dataset(&args.experiment.dataset)?;
    let experiment = experiment(&args.experiment, &dataset)?;
    let dims = dims_or_all(&args.experiment.dims, &dataset);
    let split = experiment.split()?;
    let result = experiment.run_on(&split, &args.strategy, &dims)?;
    summarize(&result);
    write_reports(
        &args.out_dir,
        "report",
        &header(&experiment, split.digest()),
        std::slice::from_ref(&result),
    )?;
    if matches!(result.outcome, Outcome::Aborted(_)) {
        return Err(ResourceAbort.into());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let dataset = load_dataset(&args.experiment.dataset)?;
    let experiment = experiment(&args.experiment, &dataset)?;
    let dims = dims_or_all(&args.experiment.dims, &dataset);
    let split = experiment.split()?;
    let mut results = Vec::new();
    for strategy in std::iter::once(Strategy::Baseline).chain(dims.iter().cloned().map(Strategy::Single)) {
        let result = match experiment.run_on(&split, &strategy, &dims) {
            Ok(result) => result,
            Err(err) => {
                eprintln!("warning: {strategy}: {err}");
                StrategyResult {
                    dims: match &strategy {
                        Strategy::Single(dim) => vec![dim.clone()],
                        _ => Vec::new(),
                    },
                    strategy,
                    outcome: Outcome::Aborted(err.to_string()),
                    selection: Vec::new(),
                    segments: Vec::new(),
                }
            }
        };
        summarize(&result);
        results.push(result);
    }
    write_reports(&args.out_dir, "sweep", &header(&experiment, split.digest()), &results)
}

fn compare(args: CompareArgs) -> Result<()> {
    let mut columns: Vec<(String, Vec<StrategyResult>)> = Vec::new();
    let mut aborted = false;
    for (label, path) in &args.datasets {
        let dataset = load_dataset(path)?;
        let dims = dims_or_all(&args.dims, &dataset);
        for &algorithm in &args.algorithms {
            let mut experiment = Experiment::new(&dataset, algorithm, args.seed);
            experiment.params = engine_params(&args.engine);
            experiment.ns = args.n_select..=args.n_select;
            experiment.n_select = args.n_select;
            experiment.train_ratio = args.ratio;
            let split = experiment.split()?;
            let mut results = Vec::new();
            for strategy in Strategy::comparison_set() {
                let result = experiment
                    .run_on(&split, &strategy, &dims)
                    .with_context(|| format!("{label}/{algorithm}: {strategy}"))?;
                aborted |= matches!(result.outcome, Outcome::Aborted(_));
                results.push(result);
            }
            columns.push((format!("{label}/{algorithm}"), results));
        }
    }
    let table: Vec<ComparisonColumn<'_>> = columns
        .iter()
        .map(|(label, results)| ComparisonColumn {
            label: label.clone(),
            results,
        })
        .collect();
    let mut out = create(&args.out)?;
    comparison_csv(&mut out, &table, args.n_select)?;
    out.flush()?;
    let mut stdout = std::io::stdout().lock();
    comparison_csv(&mut stdout, &table, args.n_select)?;
    if aborted {
        eprintln!("note: `-` marks strategies that hit a resource limit");
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let config = DaviConfig::new(&args.dims, &dataset.dimensions)?;
    let sessions = augment_dataset(&dataset.sessions, &config);
    let model = ctxrec::engine::train(args.algorithm, &sessions, &engine_params(&args.engine))?;
    model
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    match &model {
        TrainedModel::Cf(m) => println!(
            "cf model: {} tokens, {} similar pairs",
            m.model.tokens().len(),
            m.model.pair_count()
        ),
        TrainedModel::Ar(m) => println!(
            "ar model: {} rules (min support {}, min confidence {})",
            m.rules().len(),
            m.thresholds().min_support,
            m.thresholds().min_confidence
        ),
    }
    Ok(())
}

fn recommend(args: RecommendArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model, args.neighbors)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let mut observables = Vec::with_capacity(args.items.len() + args.context.len());
    for item in &args.items {
        observables.push(ctxrec::ItemId::new(item.as_str())?.as_str().to_owned());
    }
    for (dim, value) in &args.context {
        observables.push(VirtualItemId::new(dim, value)?.into_token());
    }
    for scored in model.recommend(&observables, args.n) {
        println!("{} {}", scored.item, scored.score);
    }
    Ok(())
}
