// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Context-aware top-N recommendation with contextual dimensions represented
//! as virtual items.
//!
//! A context value such as "accessed on the 5th" becomes the token
//! `ctx:day=05`, added to training sessions and to the observables of a
//! recommendation request. The recommenders themselves (item-based
//! collaborative filtering in [`cf`], association rules in [`ar`]) are not
//! modified; they only ever recommend actual items.

pub mod ar;
pub mod cf;
pub mod davi;
pub mod domain;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod report;
pub mod strategies;
pub mod synthetic;

pub use davi::{DaviConfig, TokenSession};
pub use domain::{Access, Catalog, Dataset, DimensionRegistry, ItemId, Session, VirtualItemId};
pub use engine::{Algorithm, EngineParams, Recommender, Scored, TrainedModel};
pub use error::{Error, Result};
pub use evaluation::{Averaging, EvalReport, EvalSplit, HiddenCase, MetricRow};
pub use strategies::{Experiment, Outcome, Strategy, StrategyResult};
