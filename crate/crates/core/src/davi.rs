// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Context dimensions as virtual items.
//!
//! Training sessions gain one `ctx:<dimension>=<value>` token per active
//! dimension value; recommendation-time observables gain the tokens of the
//! active session's context. The recommenders themselves are untouched.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{ContextMap, DimensionRegistry, ItemId, Session, VirtualItemId};
use crate::error::{Error, Result};

/// The ordered list of dimensions injected as virtual items.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DaviConfig {
    dimensions: Vec<String>,
}

impl DaviConfig {
    pub fn new<S: AsRef<str>>(dimensions: &[S], registry: &DimensionRegistry) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(dimensions.len());
        for dim in dimensions {
            let dim = dim.as_ref();
            if !registry.contains(dim) {
                return Err(Error::UnregisteredDimension(dim.to_owned()));
            }
            if !seen.insert(dim) {
                return Err(Error::Config(format!("dimension `{dim}` listed twice")));
            }
            out.push(dim.to_owned());
        }
        Ok(DaviConfig { dimensions: out })
    }

    /// The context-free (user x item) configuration.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn dimensions(&self) -> &[String] {
        &self.dimensions
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    /// Returns a copy with `dimension` appended. The caller guarantees it is
    /// registered and not yet present.
    pub fn with(&self, dimension: &str) -> Self {
        let mut dimensions = self.dimensions.clone();
        dimensions.push(dimension.to_owned());
        DaviConfig { dimensions }
    }

    fn virtual_tokens<'a>(&'a self, context: &'a ContextMap) -> impl Iterator<Item = String> + 'a {
        self.dimensions.iter().flat_map(move |dim| {
            context.get(dim).into_iter().flatten().map(move |value| {
                VirtualItemId::new(dim, value)
                    .expect("configured dimensions have valid names")
                    .into_token()
            })
        })
    }
}

/// A session reduced to the token set a recommender trains on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSession {
    pub id: String,
    pub user_id: String,
    pub tokens: Vec<String>,
}

/// Actual items of `session` followed by its virtual items for the active
/// dimensions. Every value of a multi-valued dimension is injected.
pub fn augment_session(session: &Session, config: &DaviConfig) -> Vec<String> {
    session
        .items
        .iter()
        .map(|item| item.as_str().to_owned())
        .chain(config.virtual_tokens(&session.context))
        .collect()
}

pub fn augment_dataset(sessions: &[Session], config: &DaviConfig) -> Vec<TokenSession> {
    sessions
        .iter()
        .map(|session| TokenSession {
            id: session.id.clone(),
            user_id: session.user_id.clone(),
            tokens: augment_session(session, config),
        })
        .collect()
}

/// The observable set O for a recommendation request: the observed items
/// plus the virtual items of the active context.
///
/// For item-attribute dimensions `active_context` must be computed from
/// `observed` alone (see [`crate::domain::Dataset::observed_context`]).
pub fn observables_with_context(observed: &[ItemId], active_context: &ContextMap, config: &DaviConfig) -> Vec<String> {
    observed
        .iter()
        .map(|item| item.as_str().to_owned())
        .chain(config.virtual_tokens(active_context))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ContextDimension, DimensionSource};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn registry() -> DimensionRegistry {
        let mut r = DimensionRegistry::temporal();
        r.register(ContextDimension::new("band", DimensionSource::ItemAttribute))
            .unwrap();
        r
    }

    fn session(items: &[&str], context: &[(&str, &[&str])]) -> Session {
        Session {
            id: "s".into(),
            user_id: "u".into(),
            items: items.iter().map(|i| ItemId::new(*i).unwrap()).collect(),
            context: context
                .iter()
                .map(|(d, vs)| (d.to_string(), vs.iter().map(|v| v.to_string()).collect()))
                .collect(),
            access_count: items.len(),
        }
    }

    #[test]
    fn adds_the_day_token() {
        let config = DaviConfig::new(&["day"], &registry()).unwrap();
        let s = session(&["A", "B"], &[("day", &["05"])]);
        assert_eq!(augment_session(&s, &config), ["A", "B", "ctx:day=05"]);
    }

    #[test]
    fn empty_config_is_identity() {
        let s = session(&["A", "B"], &[("day", &["05"])]);
        assert_eq!(augment_session(&s, &DaviConfig::none()), ["A", "B"]);
        let sessions = vec![s.clone(), session(&["C"], &[])];
        let augmented = augment_dataset(&sessions, &DaviConfig::none());
        for (orig, aug) in sessions.iter().zip(&augmented) {
            let items: Vec<&str> = orig.items.iter().map(ItemId::as_str).collect();
            assert_eq!(aug.tokens, items);
        }
    }

    #[test]
    fn multi_valued_context_injects_every_value() {
        let config = DaviConfig::new(&["band"], &registry()).unwrap();
        let s = session(&["A", "B"], &[("band", &["X", "Y"])]);
        assert_eq!(augment_session(&s, &config), ["A", "B", "ctx:band=X", "ctx:band=Y"]);
    }

    #[test]
    fn each_session_gets_its_own_context() {
        let config = DaviConfig::new(&["day"], &registry()).unwrap();
        let mut s1 = session(&["A"], &[("day", &["01"])]);
        s1.id = "s1".into();
        let mut s2 = session(&["B"], &[("day", &["02"])]);
        s2.id = "s2".into();
        let out = augment_dataset(&[s1, s2], &config);
        assert_eq!(out[0].tokens, ["A", "ctx:day=01"]);
        assert_eq!(out[1].tokens, ["B", "ctx:day=02"]);
        assert_eq!(out[1].id, "s2");
    }

    #[test]
    fn observables_gain_active_context() {
        let config = DaviConfig::new(&["day"], &registry()).unwrap();
        let observed = vec![ItemId::new("B").unwrap()];
        let ctx: ContextMap = [("day".to_string(), BTreeSet::from(["05".to_string()]))].into();
        assert_eq!(observables_with_context(&observed, &ctx, &config), ["B", "ctx:day=05"]);
        assert_eq!(observables_with_context(&observed, &ctx, &DaviConfig::none()), ["B"]);
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            DaviConfig::new(&["genre"], &registry()),
            Err(Error::UnregisteredDimension(_))
        ));
        assert!(matches!(
            DaviConfig::new(&["day", "day"], &registry()),
            Err(Error::Config(_))
        ));
        let c = DaviConfig::new(&["day"], &registry()).unwrap().with("hour");
        assert_eq!(c.dimensions(), ["day", "hour"]);
    }

    proptest! {
        #[test]
        fn augmentation_properties(
            items in proptest::collection::btree_set("[a-z]{1,3}", 1..6),
            days in proptest::collection::btree_set("[0-3][0-9]", 0..3),
            bands in proptest::collection::btree_set("[A-Z]{1,2}", 0..3),
            use_day: bool,
            use_band: bool,
        ) {
            let items: Vec<&str> = items.iter().map(String::as_str).collect();
            let days: Vec<&str> = days.iter().map(String::as_str).collect();
            let bands: Vec<&str> = bands.iter().map(String::as_str).collect();
            let s = session(&items, &[("day", &days), ("band", &bands)]);
            let mut dims = Vec::new();
            if use_day { dims.push("day"); }
            if use_band { dims.push("band"); }
            let config = DaviConfig::new(&dims, &registry()).unwrap();
            let tokens = augment_session(&s, &config);

            // Never removes items.
            for item in &items {
                prop_assert!(tokens.iter().any(|t| t == item));
            }
            // Virtual tokens decode to exactly the active context pairs.
            let decoded: BTreeSet<(String, String)> = tokens
                .iter()
                .filter_map(|t| VirtualItemId::decode(t))
                .map(|v| (v.dimension().to_owned(), v.value().to_owned()))
                .collect();
            let expected: BTreeSet<(String, String)> = dims
                .iter()
                .flat_map(|d| s.context[*d].iter().map(move |v| (d.to_string(), v.clone())))
                .collect();
            prop_assert_eq!(decoded, expected);
            prop_assert_eq!(tokens.len(), items.len() + (if use_day { days.len() } else { 0 }) + (if use_band { bands.len() } else { 0 }));
        }
    }
}
