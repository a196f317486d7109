// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Core data model: actual items, virtual (contextual) items, sessions and
//! datasets, plus the registry of context dimensions a dataset knows about.
//!
//! Every access is an implicit rating of 1. Repeated accesses to the same item
//! inside a session collapse into one, so sessions are binary item sets.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{self, Sessionization};

/// Token namespace owned by virtual items.
pub const VIRTUAL_PREFIX: &str = "ctx:";

/// Per-session context: dimension name to the set of values observed.
pub type ContextMap = BTreeMap<String, BTreeSet<String>>;

/// Item attributes keyed by item, as loaded from a catalog.
pub type Catalog = BTreeMap<ItemId, BTreeMap<String, String>>;

/// Returns true for tokens in the virtual item namespace.
pub fn is_virtual(token: &str) -> bool {
    token.starts_with(VIRTUAL_PREFIX)
}

/// An actual (recommendable) item.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let reason = if id.is_empty() {
            Some("empty id")
        } else if is_virtual(&id) {
            Some("the `ctx:` prefix is reserved for virtual items")
        } else if id.contains(['\t', '\n', '\r', ',']) {
            Some("ids must not contain tabs, commas or line breaks")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidItemId { id, reason }),
            None => Ok(ItemId(id)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for ItemId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ItemId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        ItemId::new(value)
    }
}

impl From<ItemId> for String {
    fn from(id: ItemId) -> String {
        id.0
    }
}

/// A contextual `(dimension, value)` pair encoded as an ordinary item token
/// `ctx:<dimension>=<value>`.
///
/// Dimension names never contain `=`, so splitting at the first `=` after the
/// prefix recovers the pair exactly and the encoding is injective.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VirtualItemId {
    dimension: String,
    value: String,
    encoded: String,
}

impl VirtualItemId {
    pub fn new(dimension: &str, value: &str) -> Result<Self> {
        validate_dimension_name(dimension)?;
        Ok(VirtualItemId {
            dimension: dimension.to_owned(),
            value: value.to_owned(),
            encoded: format!("{VIRTUAL_PREFIX}{dimension}={value}"),
        })
    }

    pub fn decode(token: &str) -> Option<Self> {
        let rest = token.strip_prefix(VIRTUAL_PREFIX)?;
        let (dimension, value) = rest.split_once('=')?;
        if dimension.is_empty() {
            return None;
        }
        Some(VirtualItemId {
            dimension: dimension.to_owned(),
            value: value.to_owned(),
            encoded: token.to_owned(),
        })
    }

    pub fn dimension(&self) -> &str {
        &self.dimension
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn as_str(&self) -> &str {
        &self.encoded
    }

    pub fn into_token(self) -> String {
        self.encoded
    }
}

impl fmt::Display for VirtualItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encoded)
    }
}

fn validate_dimension_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('=') || name.contains(['\t', '\n', '\r', ',']) {
        return Err(Error::InvalidDimensionName(name.to_owned()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionSource {
    /// Derived from the access timestamp (day, hour, ...).
    Temporal,
    /// Looked up in the item catalog for every accessed item.
    ItemAttribute,
    /// Carried by the access log itself as a pre-resolved `ctx_<name>` column.
    SessionAttribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDimension {
    pub name: String,
    pub source: DimensionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<BTreeSet<String>>,
}

impl ContextDimension {
    pub fn new(name: impl Into<String>, source: DimensionSource) -> Self {
        ContextDimension {
            name: name.into(),
            source,
            domain: None,
        }
    }
}

/// Ordered set of uniquely named context dimensions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionRegistry {
    dimensions: Vec<ContextDimension>,
}

impl DimensionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, dimension: ContextDimension) -> Result<()> {
        validate_dimension_name(&dimension.name)?;
        if self.contains(&dimension.name) {
            return Err(Error::DuplicateDimension(dimension.name));
        }
        self.dimensions.push(dimension);
        Ok(())
    }

    /// The six dimensions derivable from timestamps.
    pub fn temporal() -> Self {
        let mut registry = Self::new();
        for name in ingestion::TEMPORAL_DIMENSIONS {
            registry
                .register(ContextDimension::new(*name, DimensionSource::Temporal))
                .expect("temporal dimension names are valid and distinct");
        }
        registry
    }

    /// Registers every dimension the inputs can supply: temporal ones when all
    /// accesses carry timestamps, one per catalog attribute, and one per
    /// `ctx_*` column seen in the log.
    pub fn infer(accesses: &[Access], catalog: &Catalog) -> Result<Self> {
        let mut registry = if !accesses.is_empty() && accesses.iter().all(|a| a.timestamp.is_some()) {
            Self::temporal()
        } else {
            Self::new()
        };
        let attributes: BTreeSet<&str> = catalog
            .values()
            .flat_map(|attrs| attrs.keys().map(String::as_str))
            .collect();
        for name in attributes {
            registry.register(ContextDimension::new(name, DimensionSource::ItemAttribute))?;
        }
        let columns: BTreeSet<&str> = accesses
            .iter()
            .flat_map(|a| a.raw_context.keys().map(String::as_str))
            .collect();
        for name in columns {
            registry.register(ContextDimension::new(name, DimensionSource::SessionAttribute))?;
        }
        Ok(registry)
    }

    pub fn get(&self, name: &str) -> Option<&ContextDimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dimensions.iter().map(|d| d.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContextDimension> {
        self.dimensions.iter()
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    /// Encodes `(dimension, value)` as a virtual item token, checking that the
    /// dimension is registered.
    pub fn encode_virtual_item(&self, dimension: &str, value: &str) -> Result<VirtualItemId> {
        validate_dimension_name(dimension)?;
        if !self.contains(dimension) {
            return Err(Error::UnregisteredDimension(dimension.to_owned()));
        }
        VirtualItemId::new(dimension, value)
    }
}

/// One user-item interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub session_id: String,
    pub user_id: String,
    pub item: ItemId,
    /// UTC epoch seconds.
    pub timestamp: Option<i64>,
    pub raw_context: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub user_id: String,
    /// Deduplicated, in first-access order.
    pub items: Vec<ItemId>,
    pub context: ContextMap,
    /// Number of accesses before deduplication.
    pub access_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub accesses: usize,
    pub distinct_items: usize,
    pub distinct_users: usize,
}

impl DatasetStats {
    pub fn compute(sessions: &[Session]) -> Self {
        let items: HashSet<&ItemId> = sessions.iter().flat_map(|s| s.items.iter()).collect();
        let users: HashSet<&str> = sessions.iter().map(|s| s.user_id.as_str()).collect();
        DatasetStats {
            accesses: sessions.iter().map(|s| s.access_count).sum(),
            distinct_items: items.len(),
            distinct_users: users.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub sessionization: Sessionization,
    /// Offset added to every timestamp before temporal derivation.
    pub utc_offset_seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sessions: Vec<Session>,
    pub catalog: Catalog,
    pub dimensions: DimensionRegistry,
    pub stats: DatasetStats,
}

impl Dataset {
    /// Context of `session` as seen when only `observed` of its items are
    /// known. Item-attribute dimensions are recomputed from `observed`, so the
    /// attributes of a hidden item never leak into recommendation inputs.
    pub fn observed_context(&self, session: &Session, observed: &[ItemId]) -> ContextMap {
        let mut context = ContextMap::new();
        for (name, values) in &session.context {
            match self.dimensions.get(name).map(|d| d.source) {
                Some(DimensionSource::ItemAttribute) => {
                    let values = item_attribute_values(&self.catalog, observed, name);
                    if !values.is_empty() {
                        context.insert(name.clone(), values);
                    }
                }
                Some(_) => {
                    context.insert(name.clone(), values.clone());
                }
                None => {}
            }
        }
        context
    }

    /// Number of distinct tokens (actual and virtual) once `dimensions` are injected.
    pub fn distinct_tokens(&self, dimensions: &[String]) -> usize {
        let mut pairs = HashSet::new();
        for session in &self.sessions {
            for dim in dimensions {
                for value in session.context.get(dim).into_iter().flatten() {
                    pairs.insert((dim.as_str(), value.as_str()));
                }
            }
        }
        self.stats.distinct_items + pairs.len()
    }

    pub fn is_consistent(&self) -> bool {
        DatasetStats::compute(&self.sessions) == self.stats
    }
}

fn item_attribute_values(catalog: &Catalog, items: &[ItemId], attribute: &str) -> BTreeSet<String> {
    items
        .iter()
        .filter_map(|item| catalog.get(item)?.get(attribute).cloned())
        .collect()
}

/// Groups accesses into sessions and attaches context for every registered
/// dimension. Returns the dataset and any non-fatal warnings.
pub fn build_dataset(
    accesses: &[Access],
    catalog: Catalog,
    registry: DimensionRegistry,
    options: &BuildOptions,
) -> Result<(Dataset, Vec<String>)> {
    let mut warnings = Vec::new();
    for access in accesses {
        if access.session_id.is_empty() || access.user_id.is_empty() {
            return Err(Error::Config(format!(
                "access to `{}` has an empty session or user id",
                access.item
            )));
        }
    }
    let wants_time = registry.iter().any(|d| d.source == DimensionSource::Temporal);
    if wants_time {
        if let Some((index, access)) = accesses.iter().enumerate().find(|(_, a)| a.timestamp.is_none()) {
            return Err(Error::MissingTimestamp {
                index,
                session: access.session_id.clone(),
                purpose: "a temporal dimension",
            });
        }
    }

    let groups = ingestion::sessionize(accesses, options.sessionization)?;
    let mut missing_items: BTreeSet<ItemId> = BTreeSet::new();
    let mut sessions = Vec::with_capacity(groups.len());
    for group in &groups {
        let mut items = Vec::new();
        let mut seen = HashSet::new();
        for access in &group.accesses {
            if seen.insert(&access.item) {
                items.push(access.item.clone());
            }
        }

        let mut context = ContextMap::new();
        for dimension in registry.iter() {
            let values: BTreeSet<String> = match dimension.source {
                DimensionSource::Temporal => group
                    .accesses
                    .iter()
                    .filter_map(|a| a.timestamp)
                    .filter_map(|ts| {
                        ingestion::derive_temporal_contexts(ts + options.utc_offset_seconds)
                            .ok()?
                            .remove(dimension.name.as_str())
                    })
                    .collect(),
                DimensionSource::ItemAttribute => {
                    for item in &items {
                        if !catalog.contains_key(item) {
                            missing_items.insert(item.clone());
                        }
                    }
                    item_attribute_values(&catalog, &items, &dimension.name)
                }
                DimensionSource::SessionAttribute => group
                    .accesses
                    .iter()
                    .filter_map(|a| a.raw_context.get(&dimension.name).cloned())
                    .collect(),
            };
            if !values.is_empty() {
                context.insert(dimension.name.clone(), values);
            }
        }

        sessions.push(Session {
            id: group.session_id.clone(),
            user_id: group.user_id.clone(),
            items,
            context,
            access_count: group.accesses.len(),
        });
    }
    for item in missing_items {
        warnings.push(format!(
            "item `{item}` is missing from the catalog; its attributes are omitted"
        ));
    }

    let stats = DatasetStats::compute(&sessions);
    Ok((
        Dataset {
            sessions,
            catalog,
            dimensions: registry,
            stats,
        },
        warnings,
    ))
}
