// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the benchmarks.

use ctxrec::davi::{augment_dataset, DaviConfig};
use ctxrec::synthetic::{generate, SyntheticConfig, INFORMATIVE_DIMENSION, NOISE_DIMENSION};
use ctxrec::{Dataset, TokenSession};

/// A synthetic dataset with `sessions` sessions, an informative and a noise dimension.
pub fn dataset(sessions: usize) -> Dataset {
    generate(&SyntheticConfig {
        sessions,
        noise_values: 4,
        ..SyntheticConfig::with_seed(17)
    })
    .expect("valid generator settings")
}

/// Token sessions with both dimensions injected as virtual items.
pub fn augmented(dataset: &Dataset) -> Vec<TokenSession> {
    let config = DaviConfig::new(&[INFORMATIVE_DIMENSION, NOISE_DIMENSION], &dataset.dimensions)
        .expect("dimensions are registered");
    augment_dataset(&dataset.sessions, &config)
}
