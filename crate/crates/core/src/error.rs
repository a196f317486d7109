// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension `{0}` is not registered")]
    UnregisteredDimension(String),

    #[error("dimension `{0}` is registered twice")]
    DuplicateDimension(String),

    #[error("dimension name `{0}` must be non-empty and must not contain `=`")]
    InvalidDimensionName(String),

    #[error("invalid item id `{id}`: {reason}")]
    InvalidItemId { id: String, reason: &'static str },

    #[error("line {line}: item id `{id}` uses the reserved `ctx:` prefix")]
    ReservedItemId { line: usize, id: String },

    #[error("missing mandatory column `{0}`")]
    MissingColumn(&'static str),

    #[error("empty input: a header row is required")]
    EmptyInput,

    #[error("catalog header must be `item_id,attribute,value`, found `{0}`")]
    CatalogHeader(String),

    #[error("access {index} (session `{session}`) has no timestamp but {purpose} requires one")]
    MissingTimestamp {
        index: usize,
        session: String,
        purpose: &'static str,
    },

    #[error("cosine similarity is undefined for an empty occurrence set")]
    UndefinedSimilarity,

    #[error("cannot build a model from zero sessions")]
    NoSessions,

    #[error("threshold selection needs at least 3 distinct items, found {0}")]
    TooFewItems(usize),

    #[error("support threshold {0} is outside (0, 1]")]
    InvalidSupport(f64),

    #[error("frequent itemset count exceeded the limit of {limit}")]
    ItemsetLimit { limit: usize },

    #[error("split needs at least 2 sessions, found {0}")]
    SplitTooSmall(usize),

    #[error("split ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),

    #[error("evaluation produced no usable test cases ({skipped} skipped)")]
    NoTestCases { skipped: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file, line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Resource-limit aborts are reported as `-` rather than treated as input errors.
    pub fn is_resource_limit(&self) -> bool {
        matches!(self, Error::ItemsetLimit { .. })
    }

    pub(crate) fn model_format(line: usize, message: impl Into<String>) -> Self {
        Error::ModelFormat {
            line,
            message: message.into(),
        }
    }
}
