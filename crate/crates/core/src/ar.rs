// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Association-rule recommender.
//!
//! Frequent itemsets are mined level by level (Apriori candidate generation,
//! supports counted by intersecting session-id lists). Rules have a single
//! actual item as consequent; virtual items may only appear in antecedents.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::davi::TokenSession;
use crate::domain::is_virtual;
use crate::engine::Scored;
use crate::error::{Error, Result};

const MODEL_HEADER: &str = "# ctxrec rule model v1";

pub const DEFAULT_MAX_ITEMSETS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min_support: f64,
    pub min_confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArParams {
    /// Overrides the data-driven support threshold.
    pub min_support: Option<f64>,
    /// Overrides the data-driven confidence threshold.
    pub min_confidence: Option<f64>,
    pub max_itemsets: usize,
}

impl Default for ArParams {
    fn default() -> Self {
        ArParams {
            min_support: None,
            min_confidence: None,
            max_itemsets: DEFAULT_MAX_ITEMSETS,
        }
    }
}

#[inline]
fn relative(count: u32, total: usize) -> f64 {
    count as f64 / total as f64
}

/// Data-driven thresholds, computed over actual items only.
///
/// `min_support` is the support of the `ceil(m / 2)`-th most frequent of the
/// `m` distinct items, so at least half of the items stay frequent.
/// `min_confidence` is the support of the third most frequent item.
pub fn choose_thresholds(sessions: &[TokenSession]) -> Result<Thresholds> {
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for session in sessions {
        let distinct: HashSet<&str> = session
            .tokens
            .iter()
            .map(String::as_str)
            .filter(|t| !is_virtual(t))
            .collect();
        for token in distinct {
            *counts.entry(token).or_default() += 1;
        }
    }
    if counts.len() < 3 {
        return Err(Error::TooFewItems(counts.len()));
    }
    let mut sorted: Vec<u32> = counts.into_values().collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let half = sorted.len().div_ceil(2);
    Ok(Thresholds {
        min_support: relative(sorted[half - 1], sessions.len()),
        min_confidence: relative(sorted[2], sessions.len()),
    })
}

/// Frequent itemsets with their absolute session counts.
#[derive(Debug, Clone)]
pub struct FrequentItemsets {
    tokens: Vec<String>,
    sessions: usize,
    min_support: f64,
    /// Keys are sorted token ids.
    counts: HashMap<Vec<u32>, u32>,
}

impl FrequentItemsets {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn session_count(&self) -> usize {
        self.sessions
    }

    pub fn min_support(&self) -> f64 {
        self.min_support
    }

    /// Relative support of every frequent itemset, keyed by sorted tokens.
    pub fn supports(&self) -> BTreeMap<Vec<String>, f64> {
        self.counts
            .iter()
            .map(|(set, &count)| (self.decode(set), relative(count, self.sessions)))
            .collect()
    }

    pub fn support_of(&self, tokens: &[&str]) -> Option<f64> {
        let lookup: HashMap<&str, u32> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        let mut ids = tokens
            .iter()
            .map(|t| lookup.get(t).copied())
            .collect::<Option<Vec<u32>>>()?;
        ids.sort_unstable();
        ids.dedup();
        self.counts.get(&ids).map(|&c| relative(c, self.sessions))
    }

    fn decode(&self, set: &[u32]) -> Vec<String> {
        set.iter().map(|&id| self.tokens[id as usize].clone()).collect()
    }
}

/// All itemsets whose relative session frequency is at least `min_support`.
///
/// Fails with [`Error::ItemsetLimit`] once more than `max_itemsets` are found.
pub fn mine_frequent_itemsets(
    sessions: &[TokenSession],
    min_support: f64,
    max_itemsets: usize,
) -> Result<FrequentItemsets> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(Error::InvalidSupport(min_support));
    }
    let total = sessions.len();
    let mut postings: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for (pos, session) in sessions.iter().enumerate() {
        for token in &session.tokens {
            let list = postings.entry(token).or_default();
            if list.last() != Some(&(pos as u32)) {
                list.push(pos as u32);
            }
        }
    }
    let frequent = |count: usize| total > 0 && relative(count as u32, total) >= min_support;

    let mut tokens = Vec::new();
    let mut level: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
    for (token, tids) in postings {
        if frequent(tids.len()) {
            level.push((vec![tokens.len() as u32], tids));
            tokens.push(token.to_owned());
        }
    }

    let mut counts: HashMap<Vec<u32>, u32> = HashMap::new();
    while !level.is_empty() {
        if counts.len() + level.len() > max_itemsets {
            return Err(Error::ItemsetLimit { limit: max_itemsets });
        }
        let known: HashSet<&[u32]> = level.iter().map(|(set, _)| set.as_slice()).collect();
        let next: Vec<(Vec<u32>, Vec<u32>)> = (0..level.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let (a, a_tids) = &level[i];
                let prefix = &a[..a.len() - 1];
                let known = &known;
                level[i + 1..]
                    .iter()
                    .take_while(move |(b, _)| &b[..b.len() - 1] == prefix)
                    .filter_map(move |(b, b_tids)| {
                        let mut candidate = a.clone();
                        candidate.push(*b.last().expect("itemsets are non-empty"));
                        let closed = (0..candidate.len() - 2).all(|skip| {
                            let subset: Vec<u32> = candidate
                                .iter()
                                .enumerate()
                                .filter(|&(k, _)| k != skip)
                                .map(|(_, &id)| id)
                                .collect();
                            known.contains(subset.as_slice())
                        });
                        if !closed {
                            return None;
                        }
                        let tids = intersect(a_tids, b_tids);
                        frequent(tids.len()).then_some((candidate, tids))
                    })
            })
            .collect();
        counts.extend(level.into_iter().map(|(set, tids)| (set, tids.len() as u32)));
        level = next;
    }

    Ok(FrequentItemsets {
        tokens,
        sessions: total,
        min_support,
        counts,
    })
}

fn intersect(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Sorted tokens, possibly virtual.
    pub antecedent: Vec<String>,
    /// Always an actual item.
    pub consequent: String,
    /// Support of antecedent plus consequent.
    pub support: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleModel {
    /// Sorted by confidence desc, support desc, consequent asc, antecedent asc.
    rules: Vec<Rule>,
    thresholds: Thresholds,
}

fn rule_order(a: &Rule, b: &Rule) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(b.support.total_cmp(&a.support))
        .then_with(|| a.consequent.cmp(&b.consequent))
        .then_with(|| a.antecedent.cmp(&b.antecedent))
}

/// Every rule `X \ {y} -> y` over frequent itemsets `X` (|X| >= 2) with an
/// actual item `y` and confidence at least `min_confidence`.
pub fn generate_rules(itemsets: &FrequentItemsets, min_confidence: f64) -> RuleModel {
    let mut rules: Vec<Rule> = itemsets
        .counts
        .par_iter()
        .filter(|(set, _)| set.len() >= 2)
        .flat_map_iter(|(set, &count)| {
            (0..set.len()).filter_map(move |skip| {
                let consequent = &itemsets.tokens[set[skip] as usize];
                if is_virtual(consequent) {
                    return None;
                }
                let antecedent: Vec<u32> = set
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != skip)
                    .map(|(_, &id)| id)
                    .collect();
                let antecedent_count = itemsets.counts[&antecedent];
                let confidence = count as f64 / antecedent_count as f64;
                (confidence >= min_confidence).then(|| Rule {
                    antecedent: itemsets.decode(&antecedent),
                    consequent: consequent.clone(),
                    support: relative(count, itemsets.sessions),
                    confidence,
                })
            })
        })
        .collect();
    rules.sort_by(rule_order);
    RuleModel {
        rules,
        thresholds: Thresholds {
            min_support: itemsets.min_support,
            min_confidence,
        },
    }
}

impl RuleModel {
    pub fn train(sessions: &[TokenSession], params: &ArParams) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::NoSessions);
        }
        let chosen = match (params.min_support, params.min_confidence) {
            (Some(s), Some(c)) => Thresholds {
                min_support: s,
                min_confidence: c,
            },
            _ => choose_thresholds(sessions)?,
        };
        let min_support = params.min_support.unwrap_or(chosen.min_support);
        let min_confidence = params.min_confidence.unwrap_or(chosen.min_confidence);
        let itemsets = mine_frequent_itemsets(sessions, min_support, params.max_itemsets)?;
        Ok(generate_rules(&itemsets, min_confidence))
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    /// Fires every rule whose antecedent is contained in the observables and
    /// whose consequent is not, keeping each item's best rule. Items rank by
    /// confidence, then support, then token.
    pub fn recommend_topn(&self, observables: &[String], n: usize) -> Vec<Scored> {
        let observed: HashSet<&str> = observables.iter().map(String::as_str).collect();
        let mut picked: HashSet<&str> = HashSet::new();
        let mut out = Vec::new();
        if n == 0 {
            return out;
        }
        for rule in &self.rules {
            if observed.contains(rule.consequent.as_str()) || picked.contains(rule.consequent.as_str()) {
                continue;
            }
            if rule.antecedent.iter().all(|t| observed.contains(t.as_str())) {
                picked.insert(&rule.consequent);
                out.push(Scored {
                    item: rule.consequent.clone(),
                    score: rule.confidence,
                });
                if out.len() == n {
                    break;
                }
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MODEL_HEADER}")?;
        writeln!(out, "min_support\t{}", self.thresholds.min_support)?;
        writeln!(out, "min_confidence\t{}", self.thresholds.min_confidence)?;
        for rule in &self.rules {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                rule.antecedent.join(","),
                rule.consequent,
                rule.support,
                rule.confidence
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |expect: &str| -> Result<String> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::model_format(0, "unexpected end of file"))?;
            let line = line?;
            if expect == MODEL_HEADER {
                return if line.trim_end() == MODEL_HEADER {
                    Ok(line)
                } else {
                    Err(Error::model_format(no, "not a rule model"))
                };
            }
            match line.split_once('\t') {
                Some((key, value)) if key == expect => Ok(value.to_owned()),
                _ => Err(Error::model_format(no, format!("expected `{expect}`"))),
            }
        };
        header(MODEL_HEADER)?;
        let parse = |v: String, what: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::model_format(0, format!("bad {what}")))
        };
        let min_support = parse(header("min_support")?, "min_support")?;
        let min_confidence = parse(header("min_confidence")?, "min_confidence")?;

        let mut rules = Vec::new();
        for (no, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [antecedent, consequent, support, confidence] = fields[..] else {
                return Err(Error::model_format(no, "expected 4 tab-separated fields"));
            };
            if antecedent.is_empty() || consequent.is_empty() || is_virtual(consequent) {
                return Err(Error::model_format(no, "empty antecedent or invalid consequent"));
            }
            let number = |v: &str| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| *x > 0.0 && *x <= 1.0)
                    .ok_or_else(|| Error::model_format(no, "support and confidence must be in (0, 1]"))
            };
            rules.push(Rule {
                antecedent: antecedent.split(',').map(str::to_owned).collect(),
                consequent: consequent.to_owned(),
                support: number(support)?,
                confidence: number(confidence)?,
            });
        }
        rules.sort_by(rule_order);
        Ok(RuleModel {
            rules,
            thresholds: Thresholds {
                min_support,
                min_confidence,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sessions(raw: &[&[&str]]) -> Vec<TokenSession> {
        raw.iter()
            .enumerate()
            .map(|(i, tokens)| TokenSession {
                id: format!("s{i}"),
                user_id: format!("u{i}"),
                tokens: tokens.iter().map(|t| t.to_string()).collect(),
            })
            .collect()
    }

    fn toy() -> Vec<TokenSession> {
        sessions(&[&["A", "B"], &["A", "B"], &["A", "C"]])
    }

    fn obs(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    fn key(tokens: &[&str]) -> Vec<String> {
        obs(tokens)
    }

    #[test]
    fn thresholds_from_item_supports() {
        // 10 sessions with supports a:.8 b:.6 c:.5 d:.2
        let mut raw: Vec<Vec<&str>> = vec![Vec::new(); 10];
        for (item, n) in [("a", 8), ("b", 6), ("c", 5), ("d", 2)] {
            for s in raw.iter_mut().take(n) {
                s.push(item);
            }
        }
        let raw: Vec<&[&str]> = raw.iter().map(Vec::as_slice).collect();
        let t = choose_thresholds(&sessions(&raw)).unwrap();
        // Two of four items must stay frequent: the cut is b's support.
        assert_eq!(t.min_support, 0.6);
        assert_eq!(t.min_confidence, 0.5);
    }

    #[test]
    fn thresholds_for_uniform_and_skewed_supports() {
        // Five sessions, each item present in two of them: support 0.4 each.
        let s = sessions(&[&["a", "b"], &["a", "c"], &["b", "c"], &[], &[]]);
        let t = choose_thresholds(&s).unwrap();
        assert_eq!((t.min_support, t.min_confidence), (0.4, 0.4));

        // Supports 0.9, 0.9, 0.1.
        let raw: Vec<Vec<&str>> = (0..10)
            .map(|i| {
                if i == 0 {
                    vec!["a", "b", "c"]
                } else if i < 9 {
                    vec!["a", "b"]
                } else {
                    vec![]
                }
            })
            .collect();
        let raw: Vec<&[&str]> = raw.iter().map(Vec::as_slice).collect();
        let t = choose_thresholds(&sessions(&raw)).unwrap();
        assert!((t.min_confidence - 0.1).abs() < 1e-15);
        assert!((t.min_support - 0.9).abs() < 1e-15);
    }

    #[test]
    fn thresholds_need_three_items() {
        assert!(matches!(
            choose_thresholds(&sessions(&[&["a", "b", "ctx:d=1", "ctx:d=2"]])),
            Err(Error::TooFewItems(2))
        ));
    }

    #[test]
    fn mines_toy_itemsets() {
        let f = mine_frequent_itemsets(&toy(), 0.6, DEFAULT_MAX_ITEMSETS).unwrap();
        let s = f.supports();
        assert_eq!(s.len(), 3);
        assert_eq!(s[&key(&["A"])], 1.0);
        assert_eq!(s[&key(&["B"])], 2.0 / 3.0);
        assert_eq!(s[&key(&["A", "B"])], 2.0 / 3.0);

        let f = mine_frequent_itemsets(&toy(), 1.0, DEFAULT_MAX_ITEMSETS).unwrap();
        assert_eq!(f.supports().into_iter().collect::<Vec<_>>(), vec![(key(&["A"]), 1.0)]);

        let f = mine_frequent_itemsets(&toy(), 1.0 + 1e-9, DEFAULT_MAX_ITEMSETS);
        assert!(matches!(f, Err(Error::InvalidSupport(_))));
        let f = mine_frequent_itemsets(&sessions(&[&["A"], &["B"]]), 0.51, DEFAULT_MAX_ITEMSETS).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn itemset_cap() {
        let row: &[&str] = &["A", "B", "C", "D"];
        let s = sessions(&[row; 3]);
        assert!(matches!(
            mine_frequent_itemsets(&s, 0.5, 10),
            Err(Error::ItemsetLimit { limit: 10 })
        ));
        assert_eq!(mine_frequent_itemsets(&s, 0.5, 15).unwrap().len(), 15);
    }

    #[test]
    fn toy_rules() {
        let f = mine_frequent_itemsets(&toy(), 0.6, DEFAULT_MAX_ITEMSETS).unwrap();
        let model = generate_rules(&f, 0.7);
        assert_eq!(model.rules().len(), 1);
        let r = &model.rules()[0];
        assert_eq!(
            (r.antecedent.as_slice(), r.consequent.as_str()),
            (&key(&["B"])[..], "A")
        );
        assert_eq!(r.confidence, 1.0);

        let all = generate_rules(&f, 0.0);
        assert_eq!(all.rules().len(), 2);
    }

    #[test]
    fn virtual_items_only_in_antecedents() {
        let s = sessions(&[&["A", "ctx:day=05"], &["A", "ctx:day=05"]]);
        let f = mine_frequent_itemsets(&s, 0.5, DEFAULT_MAX_ITEMSETS).unwrap();
        let model = generate_rules(&f, 0.0);
        assert_eq!(model.rules().len(), 1);
        assert_eq!(model.rules()[0].antecedent, key(&["ctx:day=05"]));
        assert_eq!(model.rules()[0].consequent, "A");
    }

    #[test]
    fn recommendation_by_confidence() {
        let f = mine_frequent_itemsets(&toy(), 0.6, DEFAULT_MAX_ITEMSETS).unwrap();
        let model = generate_rules(&f, 0.7);
        let recs = model.recommend_topn(&obs(&["B"]), 3);
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].item.as_str(), recs[0].score), ("A", 1.0));
        assert!(model.recommend_topn(&obs(&["Z"]), 3).is_empty());
    }

    #[test]
    fn context_rule_outranks_plain_rule() {
        let model = RuleModel {
            rules: {
                let mut r = vec![
                    Rule {
                        antecedent: key(&["B"]),
                        consequent: "A".into(),
                        support: 0.3,
                        confidence: 0.6,
                    },
                    Rule {
                        antecedent: key(&["B", "ctx:day=05"]),
                        consequent: "C".into(),
                        support: 0.1,
                        confidence: 0.9,
                    },
                ];
                r.sort_by(rule_order);
                r
            },
            thresholds: Thresholds {
                min_support: 0.1,
                min_confidence: 0.1,
            },
        };
        let recs: Vec<String> = model
            .recommend_topn(&obs(&["B", "ctx:day=05"]), 2)
            .into_iter()
            .map(|s| s.item)
            .collect();
        assert_eq!(recs, ["C", "A"]);
        let recs: Vec<String> = model
            .recommend_topn(&obs(&["B"]), 2)
            .into_iter()
            .map(|s| s.item)
            .collect();
        assert_eq!(recs, ["A"]);
    }

    #[test]
    fn thresholds_drive_training() {
        let model = RuleModel::train(
            &toy(),
            &ArParams {
                min_support: Some(0.6),
                min_confidence: Some(0.7),
                ..ArParams::default()
            },
        )
        .unwrap();
        assert_eq!(model.rules().len(), 1);
        assert_eq!(model.thresholds().min_confidence, 0.7);
    }

    #[test]
    fn serialization_round_trip() {
        let s = sessions(&[&["A", "B", "ctx:d=1"], &["A", "B"], &["A", "C", "ctx:d=1"], &["B", "C"]]);
        let f = mine_frequent_itemsets(&s, 0.25, DEFAULT_MAX_ITEMSETS).unwrap();
        let model = generate_rules(&f, 0.1);
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("A,ctx:d=1\tB\t0.25\t0.5\n"));
        assert_eq!(RuleModel::read_from(buf.as_slice()).unwrap(), model);
        assert!(RuleModel::read_from("nope".as_bytes()).is_err());
    }
}
