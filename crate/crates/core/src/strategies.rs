// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Choosing which context dimensions to inject, and the segment-based
//! Combined Reduction baseline.
//!
//! Selection never sees the test set: a validation slice is carved out of the
//! training sessions, choices are made on it, and the final model is retrained
//! on the full training set.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::davi::{augment_dataset, DaviConfig};
use crate::domain::{ContextMap, Dataset, ItemId, Session};
use crate::engine::{self, Algorithm, EngineParams, Recommender, Scored, TrainedModel};
use crate::error::{Error, Result};
use crate::evaluation::{
    derive_seed, evaluate, evaluate_with, hidden_cases, split_sessions, Averaging, EvalReport, EvalSplit, HiddenCase,
};

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.25;
pub const DEFAULT_MIN_SEGMENT_SESSIONS: usize = 30;

/// Trains candidate models and scores them on validation data.
pub trait Harness: Sync {
    type Model: Recommender;

    fn train(&self, sessions: &[Session], config: &DaviConfig) -> Result<Self::Model>;

    /// Validation F1 at the selection list length. With `segment`, only the
    /// validation cases whose visible context matches it are scored.
    fn score(&self, model: &Self::Model, config: &DaviConfig, segment: Option<&SegmentKey>) -> Result<f64>;

    /// Convenience: train on `sessions` with `config`, then score.
    fn objective(&self, sessions: &[Session], config: &DaviConfig) -> Result<f64> {
        let model = self.train(sessions, config)?;
        self.score(&model, config, None)
    }
}

/// Validation harness backed by a real recommender.
pub struct Holdout {
    pub algorithm: Algorithm,
    pub params: EngineParams,
    pub cases: Vec<HiddenCase>,
    pub n_select: usize,
    pub averaging: Averaging,
}

impl Harness for Holdout {
    type Model = TrainedModel;

    fn train(&self, sessions: &[Session], config: &DaviConfig) -> Result<TrainedModel> {
        engine::train(self.algorithm, &augment_dataset(sessions, config), &self.params)
    }

    fn score(&self, model: &TrainedModel, config: &DaviConfig, segment: Option<&SegmentKey>) -> Result<f64> {
        let n = self.n_select;
        let report = match segment {
            None => evaluate(model, &self.cases, 0, config, n..=n, self.averaging)?,
            Some(key) => {
                let cases: Vec<HiddenCase> = self
                    .cases
                    .iter()
                    .filter(|c| key.matches(&c.active_context))
                    .cloned()
                    .collect();
                evaluate(model, &cases, 0, config, n..=n, self.averaging)?
            }
        };
        Ok(report.f1_at(n).expect("requested n is reported"))
    }
}

/// Argmax of the scores; ties go to the lexicographically smallest name.
pub fn best_context(scores: &[(String, f64)]) -> Option<String> {
    scores
        .iter()
        .min_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
        .map(|(name, _)| name.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSelection {
    pub selected: Vec<String>,
    /// Objective after each accepted step, starting with the empty set.
    pub scores: Vec<f64>,
}

/// Greedy sequential forward selection from the empty set. Each round adds
/// the dimension with the highest objective, but only if it strictly improves
/// on the current set. Candidates that hit a resource limit are passed over.
pub fn forward_select<H: Harness>(harness: &H, fit: &[Session], dims: &[String]) -> Result<ForwardSelection> {
    let mut remaining: Vec<String> = dims.to_vec();
    remaining.sort();
    remaining.dedup();
    let mut config = DaviConfig::none();
    let mut current = harness.objective(fit, &config)?;
    let mut selection = ForwardSelection {
        selected: Vec::new(),
        scores: vec![current],
    };

    while !remaining.is_empty() {
        let results: Vec<Result<f64>> = remaining
            .par_iter()
            .map(|d| harness.objective(fit, &config.with(d)))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (pos, result) in results.into_iter().enumerate() {
            let score = match result {
                Ok(score) => score,
                Err(err) if err.is_resource_limit() => continue,
                Err(err) => return Err(err),
            };
            // Candidates are name-sorted, so strict `>` keeps the first name on ties.
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((pos, score));
            }
        }
        match best {
            Some((pos, score)) if score > current => {
                let dim = remaining.remove(pos);
                config = config.with(&dim);
                selection.selected.push(dim);
                selection.scores.push(score);
                current = score;
            }
            _ => break,
        }
    }
    Ok(selection)
}

/// A `(dimension, value)` context label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub dimension: String,
    pub value: String,
}

impl SegmentKey {
    pub fn matches(&self, context: &ContextMap) -> bool {
        context
            .get(&self.dimension)
            .is_some_and(|values| values.contains(&self.value))
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.dimension, self.value)
    }
}

/// Sessions grouped by every `(dimension, value)` they carry.
pub fn segment_sessions(sessions: &[Session], dims: &[String]) -> BTreeMap<SegmentKey, Vec<Session>> {
    let mut segments: BTreeMap<SegmentKey, Vec<Session>> = BTreeMap::new();
    for session in sessions {
        for dim in dims {
            for value in session.context.get(dim).into_iter().flatten() {
                segments
                    .entry(SegmentKey {
                        dimension: dim.clone(),
                        value: value.clone(),
                    })
                    .or_default()
                    .push(session.clone());
            }
        }
    }
    segments
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentModel<M> {
    pub key: SegmentKey,
    pub model: M,
    pub validation_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedReduction<M> {
    pub traditional: M,
    pub segments: Vec<SegmentModel<M>>,
    /// Segments below the size gate.
    pub skipped_small: usize,
    /// Segments that could not be trained or scored.
    pub failed: usize,
}

/// Trains a context-free model per segment with at least
/// `min_segment_sessions` sessions and keeps those whose validation F1 on
/// their own segment strictly beats the traditional model there.
pub fn combined_reduction_train<H: Harness>(
    harness: &H,
    fit: &[Session],
    dims: &[String],
    min_segment_sessions: usize,
) -> Result<CombinedReduction<H::Model>> {
    let plain = DaviConfig::none();
    let traditional = harness.train(fit, &plain)?;
    let segments = segment_sessions(fit, dims);
    let skipped_small = segments.values().filter(|s| s.len() < min_segment_sessions).count();
    let candidates: Vec<(SegmentKey, Vec<Session>)> = segments
        .into_iter()
        .filter(|(_, s)| s.len() >= min_segment_sessions)
        .collect();

    let outcomes: Vec<Result<Option<SegmentModel<H::Model>>>> = candidates
        .into_par_iter()
        .map(|(key, sessions)| {
            let model = harness.train(&sessions, &plain)?;
            let segment_f1 = harness.score(&model, &plain, Some(&key))?;
            let baseline_f1 = harness.score(&traditional, &plain, Some(&key))?;
            Ok((segment_f1 > baseline_f1).then_some(SegmentModel {
                key,
                model,
                validation_f1: segment_f1,
            }))
        })
        .collect();

    let mut retained = Vec::new();
    let mut failed = 0;
    for outcome in outcomes {
        match outcome {
            Ok(Some(segment)) => retained.push(segment),
            Ok(None) => {}
            Err(_) => failed += 1,
        }
    }
    Ok(CombinedReduction {
        traditional,
        segments: retained,
        skipped_small,
        failed,
    })
}

/// Picks the matching segment with the best validation F1 (ties by label),
/// falling back to the traditional model when none matches.
pub fn select_segment<'a, M>(
    segments: &'a [SegmentModel<M>],
    active_context: &ContextMap,
) -> Option<&'a SegmentModel<M>> {
    segments
        .iter()
        .filter(|s| s.key.matches(active_context))
        .min_by(|a, b| {
            b.validation_f1
                .total_cmp(&a.validation_f1)
                .then_with(|| a.key.cmp(&b.key))
        })
}

pub fn combined_reduction_recommend<M: Recommender>(
    traditional: &M,
    segments: &[SegmentModel<M>],
    observables: &[ItemId],
    active_context: &ContextMap,
    n: usize,
) -> Vec<Scored> {
    let observables: Vec<String> = observables.iter().map(|i| i.as_str().to_owned()).collect();
    match select_segment(segments, active_context) {
        Some(segment) => segment.model.recommend(&observables, n),
        None => traditional.recommend(&observables, n),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Plain user x item model.
    Baseline,
    Single(String),
    /// Best single dimension on validation.
    Best,
    Forward,
    /// Every candidate dimension at once.
    All,
    Combined,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Single(_) => "single",
            Strategy::Best => "best",
            Strategy::Forward => "forward",
            Strategy::All => "all",
            Strategy::Combined => "combined",
        }
    }

    /// The rows of the strategy comparison table.
    pub fn comparison_set() -> Vec<Strategy> {
        vec![
            Strategy::Baseline,
            Strategy::Best,
            Strategy::Forward,
            Strategy::All,
            Strategy::Combined,
        ]
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Single(dim) => write!(f, "single:{dim}"),
            other => f.write_str(other.label()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Strategy::Baseline,
            "best" => Strategy::Best,
            "forward" => Strategy::Forward,
            "all" => Strategy::All,
            "combined" => Strategy::Combined,
            _ => match s.strip_prefix("single:") {
                Some(dim) if !dim.is_empty() => Strategy::Single(dim.to_owned()),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown strategy `{s}` (baseline, single:<dim>, best, forward, all, combined)"
                    )))
                }
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Report(EvalReport),
    /// Training hit a resource limit; shown as `-` in tables.
    Aborted(String),
}

impl Outcome {
    pub fn report(&self) -> Option<&EvalReport> {
        match self {
            Outcome::Report(r) => Some(r),
            Outcome::Aborted(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// Dimensions injected into the final model (segment dimensions for
    /// Combined Reduction).
    pub dims: Vec<String>,
    pub outcome: Outcome,
    /// Validation F1 readings that drove the choice, in decision order.
    pub selection: Vec<(String, f64)>,
    /// Retained segments with their validation F1.
    pub segments: Vec<(SegmentKey, f64)>,
}

impl StrategyResult {
    fn finished(strategy: Strategy, dims: Vec<String>, outcome: Result<EvalReport>) -> Result<Self> {
        let outcome = match outcome {
            Ok(report) => Outcome::Report(report),
            Err(err) if err.is_resource_limit() => Outcome::Aborted(err.to_string()),
            Err(err) => return Err(err),
        };
        Ok(StrategyResult {
            strategy,
            dims,
            outcome,
            selection: Vec::new(),
            segments: Vec::new(),
        })
    }
}

/// One dataset, one algorithm, one seeded split: everything needed to run
/// and compare strategies on identical data.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub dataset: &'a Dataset,
    pub algorithm: Algorithm,
    pub params: EngineParams,
    pub ns: RangeInclusive<usize>,
    pub n_select: usize,
    pub averaging: Averaging,
    pub seed: u64,
    pub train_ratio: f64,
    pub validation_fraction: f64,
    pub min_segment_sessions: usize,
}

impl<'a> Experiment<'a> {
    pub fn new(dataset: &'a Dataset, algorithm: Algorithm, seed: u64) -> Self {
        Experiment {
            dataset,
            algorithm,
            params: EngineParams::default(),
            ns: 1..=10,
            n_select: 1,
            averaging: Averaging::PerCase,
            seed,
            train_ratio: 0.8,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            min_segment_sessions: DEFAULT_MIN_SEGMENT_SESSIONS,
        }
    }

    pub fn split(&self) -> Result<EvalSplit> {
        split_sessions(&self.dataset.sessions, self.train_ratio, self.seed)
    }

    fn test_cases(&self, split: &EvalSplit) -> (Vec<HiddenCase>, usize) {
        hidden_cases(self.dataset, &split.test, self.seed)
    }

    /// Carves the validation slice out of the training sessions.
    pub fn holdout(&self, split: &EvalSplit) -> Result<(Vec<Session>, Holdout)> {
        let seed = derive_seed(self.seed, "validation");
        let inner = split_sessions(&split.train, 1.0 - self.validation_fraction, seed)?;
        let (cases, _) = hidden_cases(self.dataset, &inner.test, seed);
        Ok((
            inner.train,
            Holdout {
                algorithm: self.algorithm,
                params: self.params,
                cases,
                n_select: self.n_select,
                averaging: self.averaging,
            },
        ))
    }

    fn check_dims(&self, dims: &[String]) -> Result<()> {
        DaviConfig::new(dims, &self.dataset.dimensions).map(|_| ())
    }

    /// Train on the full training set with `dims` injected, evaluate on test.
    pub fn evaluate_dims(&self, split: &EvalSplit, dims: &[String]) -> Result<EvalReport> {
        let config = DaviConfig::new(dims, &self.dataset.dimensions)?;
        let (cases, skipped) = self.test_cases(split);
        let model = engine::train(self.algorithm, &augment_dataset(&split.train, &config), &self.params)?;
        evaluate(&model, &cases, skipped, &config, self.ns.clone(), self.averaging)
    }

    /// The no-context baseline followed by one run per dimension, all on the
    /// same split. Per-dimension failures are kept, not propagated.
    pub fn sweep(&self, dims: &[String]) -> Result<Vec<(Option<String>, Result<EvalReport>)>> {
        self.check_dims(dims)?;
        let split = self.split()?;
        let mut out = vec![(None, self.evaluate_dims(&split, &[]))];
        for dim in dims {
            out.push((Some(dim.clone()), self.evaluate_dims(&split, std::slice::from_ref(dim))));
        }
        Ok(out)
    }

    pub fn run(&self, strategy: &Strategy, dims: &[String]) -> Result<StrategyResult> {
        self.check_dims(dims)?;
        let split = self.split()?;
        self.run_on(&split, strategy, dims)
    }

    /// Runs `strategy` on a given split. A resource limit hit anywhere,
    /// selection included, yields an [`Outcome::Aborted`] result.
    pub fn run_on(&self, split: &EvalSplit, strategy: &Strategy, dims: &[String]) -> Result<StrategyResult> {
        match self.run_strategy(split, strategy, dims) {
            Err(err) if err.is_resource_limit() => {
                let dims = match strategy {
                    Strategy::Baseline | Strategy::Best | Strategy::Forward => Vec::new(),
                    Strategy::Single(dim) => vec![dim.clone()],
                    Strategy::All | Strategy::Combined => dims.to_vec(),
                };
                StrategyResult::finished(strategy.clone(), dims, Err(err))
            }
            other => other,
        }
    }

    fn run_strategy(&self, split: &EvalSplit, strategy: &Strategy, dims: &[String]) -> Result<StrategyResult> {
        match strategy {
            Strategy::Baseline => {
                StrategyResult::finished(strategy.clone(), Vec::new(), self.evaluate_dims(split, &[]))
            }
            Strategy::Single(dim) => {
                let dims = vec![dim.clone()];
                let report = self.evaluate_dims(split, &dims);
                StrategyResult::finished(strategy.clone(), dims, report)
            }
            Strategy::All => StrategyResult::finished(strategy.clone(), dims.to_vec(), self.evaluate_dims(split, dims)),
            Strategy::Best => {
                let (fit, harness) = self.holdout(split)?;
                let mut scores = Vec::new();
                for dim in dims {
                    match harness.objective(
                        &fit,
                        &DaviConfig::new(std::slice::from_ref(dim), &self.dataset.dimensions)?,
                    ) {
                        Ok(score) => scores.push((dim.clone(), score)),
                        Err(err) if err.is_resource_limit() => {}
                        Err(err) => return Err(err),
                    }
                }
                let Some(best) = best_context(&scores) else {
                    return Ok(StrategyResult {
                        strategy: strategy.clone(),
                        dims: Vec::new(),
                        outcome: Outcome::Aborted("no dimension could be evaluated".into()),
                        selection: scores,
                        segments: Vec::new(),
                    });
                };
                let chosen = vec![best];
                let mut result =
                    StrategyResult::finished(strategy.clone(), chosen.clone(), self.evaluate_dims(split, &chosen))?;
                result.selection = scores;
                Ok(result)
            }
            Strategy::Forward => {
                let (fit, harness) = self.holdout(split)?;
                let selection = forward_select(&harness, &fit, dims)?;
                let mut result = StrategyResult::finished(
                    strategy.clone(),
                    selection.selected.clone(),
                    self.evaluate_dims(split, &selection.selected),
                )?;
                result.selection = std::iter::once("(none)".to_owned())
                    .chain(selection.selected.iter().cloned())
                    .zip(selection.scores.iter().copied())
                    .collect();
                Ok(result)
            }
            Strategy::Combined => self.combined(split, dims),
        }
    }

    fn combined(&self, split: &EvalSplit, dims: &[String]) -> Result<StrategyResult> {
        let (fit, harness) = self.holdout(split)?;
        let selected = match combined_reduction_train(&harness, &fit, dims, self.min_segment_sessions) {
            Ok(cr) => cr,
            Err(err) if err.is_resource_limit() => {
                return StrategyResult::finished(Strategy::Combined, dims.to_vec(), Err(err));
            }
            Err(err) => return Err(err),
        };

        // Retrain the chosen segments and the traditional model on the full training set.
        let plain = DaviConfig::none();
        let train_plain =
            |sessions: &[Session]| engine::train(self.algorithm, &augment_dataset(sessions, &plain), &self.params);
        let traditional = match train_plain(&split.train) {
            Ok(m) => m,
            Err(err) => return StrategyResult::finished(Strategy::Combined, dims.to_vec(), Err(err)),
        };
        let full_segments = segment_sessions(&split.train, dims);
        let mut segments = Vec::new();
        for chosen in &selected.segments {
            let sessions = &full_segments[&chosen.key];
            if let Ok(model) = train_plain(sessions) {
                segments.push(SegmentModel {
                    key: chosen.key.clone(),
                    model,
                    validation_f1: chosen.validation_f1,
                });
            }
        }

        let (cases, skipped) = self.test_cases(split);
        let report = evaluate_with(&cases, skipped, self.ns.clone(), self.averaging, |case, n| {
            combined_reduction_recommend(&traditional, &segments, &case.observables, &case.active_context, n)
                .into_iter()
                .map(|s| s.item)
                .collect()
        });
        let mut result = StrategyResult::finished(Strategy::Combined, dims.to_vec(), report)?;
        result.segments = segments.iter().map(|s| (s.key.clone(), s.validation_f1)).collect();
        Ok(result)
    }
}
