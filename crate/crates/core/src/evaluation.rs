// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! All-but-one evaluation: seeded train/test split, one hidden item per test
//! session, recall / precision / F1 over a range of list lengths.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::davi::{augment_dataset, observables_with_context, DaviConfig};
use crate::domain::{ContextMap, Dataset, ItemId, Session};
use crate::engine::{self, Algorithm, EngineParams, Recommender};
use crate::error::{Error, Result};

/// Deterministic sub-seed for a labelled purpose, independent of call order.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    pub seed: u64,
}

impl EvalSplit {
    /// Hex digest of the split membership; equal digests mean equal splits.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (tag, sessions) in [("train", &self.train), ("test", &self.test)] {
            hasher.update(tag.as_bytes());
            for s in sessions {
                hasher.update(s.id.as_bytes());
                hasher.update([0]);
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Seeded uniform shuffle, then a prefix of `round(ratio * n)` sessions
/// (at least one on each side) becomes the training set.
pub fn split_sessions(sessions: &[Session], ratio: f64, seed: u64) -> Result<EvalSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    if sessions.len() < 2 {
        return Err(Error::SplitTooSmall(sessions.len()));
    }
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * sessions.len() as f64).round() as usize).clamp(1, sessions.len() - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
    Ok(EvalSplit {
        train: pick(&order[..n_train]),
        test: pick(&order[n_train..]),
        seed,
    })
}

/// A test session with one item held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenCase {
    pub session_id: String,
    pub user_id: String,
    pub observables: Vec<ItemId>,
    pub hidden: ItemId,
    /// Context as visible from the observables alone.
    pub active_context: ContextMap,
}

/// Hides one uniformly chosen item. Sessions with fewer than two items give
/// `None`. The choice depends only on `seed` and the session id.
pub fn hide_one(dataset: &Dataset, session: &Session, seed: u64) -> Option<HiddenCase> {
    if session.items.len() < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &session.id));
    let pos = rng.gen_range(0..session.items.len());
    let mut observables = session.items.clone();
    let hidden = observables.remove(pos);
    let active_context = dataset.observed_context(session, &observables);
    Some(HiddenCase {
        session_id: session.id.clone(),
        user_id: session.user_id.clone(),
        observables,
        hidden,
        active_context,
    })
}

/// Hidden cases for every usable session plus the number skipped.
pub fn hidden_cases(dataset: &Dataset, sessions: &[Session], seed: u64) -> (Vec<HiddenCase>, usize) {
    let cases: Vec<HiddenCase> = sessions.iter().filter_map(|s| hide_one(dataset, s, seed)).collect();
    let skipped = sessions.len() - cases.len();
    (cases, skipped)
}

/// Recall and precision of one ranked list against the hidden item, using
/// the first `n` recommendations. An empty list scores (0, 0).
pub fn metrics_for_case(recommendations: &[String], hidden: &str, n: usize) -> (f64, f64) {
    let list = &recommendations[..recommendations.len().min(n)];
    if list.is_empty() {
        return (0.0, 0.0);
    }
    let hit = list.iter().any(|r| r == hidden);
    let hit = if hit { 1.0 } else { 0.0 };
    (hit, hit / list.len() as f64)
}

pub fn f1(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Every test session counts once.
    #[default]
    PerCase,
    /// Cases are averaged within each user first.
    PerUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub cases: usize,
    pub skipped: usize,
}

impl EvalReport {
    pub fn at(&self, n: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn f1_at(&self, n: usize) -> Option<f64> {
        self.at(n).map(|r| r.f1)
    }
}

/// Scores `recommend` on every case for each `n` in `ns`. Recall and
/// precision are macro-averaged; F1 is computed from the averages.
pub fn evaluate_with<F>(
    cases: &[HiddenCase],
    skipped: usize,
    ns: RangeInclusive<usize>,
    averaging: Averaging,
    recommend: F,
) -> Result<EvalReport>
where
    F: Fn(&HiddenCase, usize) -> Vec<String> + Sync,
{
    if cases.is_empty() {
        return Err(Error::NoTestCases { skipped });
    }
    let ns: Vec<usize> = ns.filter(|&n| n >= 1).collect();
    if ns.is_empty() {
        return Err(Error::Config("empty N range".into()));
    }
    let max_n = *ns.iter().max().expect("non-empty");

    // Indexed collect keeps case order, so the sums below are schedule-independent.
    let per_case: Vec<Vec<(f64, f64)>> = cases
        .par_iter()
        .map(|case| {
            let recs = recommend(case, max_n);
            ns.iter()
                .map(|&n| metrics_for_case(&recs, case.hidden.as_str(), n))
                .collect()
        })
        .collect();

    let groups: Vec<Vec<usize>> = match averaging {
        Averaging::PerCase => (0..cases.len()).map(|i| vec![i]).collect(),
        Averaging::PerUser => {
            let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, case) in cases.iter().enumerate() {
                by_user.entry(&case.user_id).or_default().push(i);
            }
            by_user.into_values().collect()
        }
    };

    let rows = ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let (mut recall, mut precision) = (0.0, 0.0);
            for group in &groups {
                let (r, p) = group
                    .iter()
                    .fold((0.0, 0.0), |(r, p), &i| (r + per_case[i][k].0, p + per_case[i][k].1));
                recall += r / group.len() as f64;
                precision += p / group.len() as f64;
            }
            recall /= groups.len() as f64;
            precision /= groups.len() as f64;
            MetricRow {
                n,
                recall,
                precision,
                f1: f1(recall, precision),
            }
        })
        .collect();

    Ok(EvalReport {
        rows,
        cases: cases.len(),
        skipped,
    })
}

/// Evaluates a trained recommender; observables gain the virtual items of
/// `config`.
pub fn evaluate(
    recommender: &dyn Recommender,
    cases: &[HiddenCase],
    skipped: usize,
    config: &DaviConfig,
    ns: RangeInclusive<usize>,
    averaging: Averaging,
) -> Result<EvalReport> {
    evaluate_with(cases, skipped, ns, averaging, |case, n| {
        let observables = observables_with_context(&case.observables, &case.active_context, config);
        recommender
            .recommend(&observables, n)
            .into_iter()
            .map(|s| s.item)
            .collect()
    })
}

/// Trains on `train` augmented with `config` and evaluates on `cases`.
#[allow(clippy::too_many_arguments)]
pub fn train_and_evaluate(
    train: &[Session],
    cases: &[HiddenCase],
    skipped: usize,
    algorithm: Algorithm,
    params: &EngineParams,
    config: &DaviConfig,
    ns: RangeInclusive<usize>,
    averaging: Averaging,
) -> Result<EvalReport> {
    let model = engine::train(algorithm, &augment_dataset(train, config), params)?;
    evaluate(&model, cases, skipped, config, ns, averaging)
}
