// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic datasets with a known informative context.
//!
//! Items are split into one pool per context value. A session first draws its
//! context, then draws each item from that context's pool with probability
//! `in_pool` (otherwise from another pool). Within a pool, item popularity
//! follows `pool_weights`. An optional `noise` dimension carries a uniformly
//! random value unrelated to the items.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    build_dataset, Access, BuildOptions, Catalog, ContextDimension, Dataset, DimensionRegistry, DimensionSource, ItemId,
};
use crate::error::{Error, Result};

pub const INFORMATIVE_DIMENSION: &str = "context";
pub const NOISE_DIMENSION: &str = "noise";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sessions: usize,
    pub contexts: usize,
    /// Relative popularity of the items inside each pool; its length is the pool size.
    pub pool_weights: Vec<f64>,
    pub in_pool: f64,
    pub session_len: usize,
    /// Number of values of the noise dimension; zero leaves it out.
    pub noise_values: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mut pool_weights = vec![1.0, 0.7];
        pool_weights.extend(std::iter::repeat_n(0.005, 8));
        SyntheticConfig {
            sessions: 2000,
            contexts: 2,
            pool_weights,
            in_pool: 0.9,
            session_len: 3,
            noise_values: 0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn with_seed(seed: u64) -> Self {
        SyntheticConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn item_count(&self) -> usize {
        self.contexts * self.pool_weights.len()
    }

    fn validate(&self) -> Result<()> {
        let problem = if self.contexts == 0 || self.pool_weights.is_empty() {
            Some("at least one context and one item per pool are required")
        } else if !(0.0..=1.0).contains(&self.in_pool) {
            Some("in_pool must lie in [0, 1]")
        } else if self.session_len == 0 || self.session_len > self.item_count() {
            Some("session length must be between 1 and the number of items")
        } else if self.contexts == 1 && self.in_pool < 1.0 {
            Some("a single context has no other pool to draw from")
        } else {
            None
        };
        match problem {
            Some(msg) => Err(Error::Config(msg.into())),
            None => Ok(()),
        }
    }
}

pub fn item_name(pool: usize, rank: usize) -> String {
    format!("p{pool}i{rank:02}")
}

/// Generates the access log behind a synthetic dataset.
pub fn generate_accesses(config: &SyntheticConfig) -> Result<Vec<Access>> {
    config.validate()?;
    let within = WeightedIndex::new(&config.pool_weights).map_err(|e| Error::Config(format!("pool weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut accesses = Vec::with_capacity(config.sessions * config.session_len);
    for s in 0..config.sessions {
        let context = rng.gen_range(0..config.contexts);
        let noise = (config.noise_values > 0).then(|| rng.gen_range(0..config.noise_values));
        let mut items: Vec<String> = Vec::with_capacity(config.session_len);
        while items.len() < config.session_len {
            let pool = if rng.gen_bool(config.in_pool) {
                context
            } else {
                let other = rng.gen_range(0..config.contexts - 1);
                if other >= context {
                    other + 1
                } else {
                    other
                }
            };
            let item = item_name(pool, within.sample(&mut rng));
            if !items.contains(&item) {
                items.push(item);
            }
        }
        let mut raw_context = BTreeMap::new();
        raw_context.insert(INFORMATIVE_DIMENSION.to_owned(), context.to_string());
        if let Some(noise) = noise {
            raw_context.insert(NOISE_DIMENSION.to_owned(), noise.to_string());
        }
        for item in items {
            accesses.push(Access {
                session_id: format!("s{s:05}"),
                user_id: format!("u{s:05}"),
                item: ItemId::new(item)?,
                timestamp: None,
                raw_context: raw_context.clone(),
            });
        }
    }
    Ok(accesses)
}

pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    let accesses = generate_accesses(config)?;
    let mut registry = DimensionRegistry::new();
    registry.register(ContextDimension::new(
        INFORMATIVE_DIMENSION,
        DimensionSource::SessionAttribute,
    ))?;
    if config.noise_values > 0 {
        registry.register(ContextDimension::new(
            NOISE_DIMENSION,
            DimensionSource::SessionAttribute,
        ))?;
    }
    let (dataset, _) = build_dataset(&accesses, Catalog::new(), registry, &BuildOptions::default())?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible_and_well_formed() {
        let config = SyntheticConfig {
            sessions: 300,
            noise_values: 2,
            ..SyntheticConfig::with_seed(5)
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.sessions, b.sessions);
        assert_eq!(a.sessions.len(), 300);
        assert!(a.is_consistent());
        for s in &a.sessions {
            assert_eq!(s.items.len(), 3);
            assert_eq!(s.context[INFORMATIVE_DIMENSION].len(), 1);
            assert_eq!(s.context[NOISE_DIMENSION].len(), 1);
        }
        assert!(a.stats.distinct_items <= config.item_count());
        let other = generate(&SyntheticConfig { seed: 6, ..config }).unwrap();
        assert_ne!(a.sessions, other.sessions);
    }

    #[test]
    fn items_mostly_come_from_the_context_pool() {
        let ds = generate(&SyntheticConfig::with_seed(1)).unwrap();
        let (mut own, mut total) = (0usize, 0usize);
        for s in &ds.sessions {
            let ctx = s.context[INFORMATIVE_DIMENSION].iter().next().unwrap();
            for item in &s.items {
                total += 1;
                own += usize::from(item.as_str().starts_with(&format!("p{ctx}")));
            }
        }
        // Repeat draws are rejected, and the hot items of the own pool are the
        // ones most often repeated, so the realised share sits below `in_pool`.
        let share = own as f64 / total as f64;
        assert!((0.65..0.9).contains(&share), "{share}");
    }

    #[test]
    fn rejects_impossible_configurations() {
        let too_long = SyntheticConfig {
            session_len: 21,
            ..SyntheticConfig::default()
        };
        assert!(generate(&too_long).is_err());
        let bad_share = SyntheticConfig {
            in_pool: 1.5,
            ..SyntheticConfig::default()
        };
        assert!(generate(&bad_share).is_err());
    }
}
