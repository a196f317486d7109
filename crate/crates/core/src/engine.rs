// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! The two recommenders behind one interface.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ar::{ArParams, RuleModel};
use crate::cf::{CfParams, CfRecommender, SimilarityModel};
use crate::davi::TokenSession;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub item: String,
    pub score: f64,
}

/// Sorts by score descending then item ascending and keeps the first `n`.
pub(crate) fn rank(scored: impl Iterator<Item = Scored>, n: usize) -> Vec<Scored> {
    let mut scored: Vec<Scored> = scored.collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item.cmp(&b.item)));
    scored.truncate(n);
    scored
}

/// Anything that turns an observable set into a ranked list of actual items.
pub trait Recommender: Send + Sync {
    fn recommend(&self, observables: &[String], n: usize) -> Vec<Scored>;
}

impl Recommender for CfRecommender {
    fn recommend(&self, observables: &[String], n: usize) -> Vec<Scored> {
        self.model.recommend_topn(observables, n, self.neighbors)
    }
}

impl Recommender for RuleModel {
    fn recommend(&self, observables: &[String], n: usize) -> Vec<Scored> {
        self.recommend_topn(observables, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cf,
    Ar,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Cf => "cf",
            Algorithm::Ar => "ar",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cf" => Ok(Algorithm::Cf),
            "ar" => Ok(Algorithm::Ar),
            other => Err(Error::Config(format!(
                "unknown algorithm `{other}` (expected cf or ar)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub cf: CfParams,
    pub ar: ArParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Cf(CfRecommender),
    Ar(RuleModel),
}

impl Recommender for TrainedModel {
    fn recommend(&self, observables: &[String], n: usize) -> Vec<Scored> {
        match self {
            TrainedModel::Cf(m) => m.recommend(observables, n),
            TrainedModel::Ar(m) => m.recommend(observables, n),
        }
    }
}

pub fn train(algorithm: Algorithm, sessions: &[TokenSession], params: &EngineParams) -> Result<TrainedModel> {
    Ok(match algorithm {
        Algorithm::Cf => TrainedModel::Cf(CfRecommender::train(sessions, &params.cf)?),
        Algorithm::Ar => TrainedModel::Ar(RuleModel::train(sessions, &params.ar)?),
    })
}

impl TrainedModel {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            TrainedModel::Cf(_) => Algorithm::Cf,
            TrainedModel::Ar(_) => Algorithm::Ar,
        }
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        match self {
            TrainedModel::Cf(m) => m.model.write_to(out),
            TrainedModel::Ar(m) => m.write_to(out),
        }
    }

    /// Reads either model format, telling them apart by the header line.
    /// The CF neighbourhood size is a serving knob, not stored in the file.
    pub fn read_from<R: BufRead>(mut input: R, neighbors: Option<usize>) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let rest = std::io::Cursor::new(first.clone()).chain(input);
        if first.starts_with("# ctxrec similarity model") {
            Ok(TrainedModel::Cf(CfRecommender {
                model: SimilarityModel::read_from(rest)?,
                neighbors,
            }))
        } else if first.starts_with("# ctxrec rule model") {
            Ok(TrainedModel::Ar(RuleModel::read_from(rest)?))
        } else {
            Err(Error::model_format(1, "unrecognised model header"))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, neighbors: Option<usize>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), neighbors)
    }
}
