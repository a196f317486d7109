// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Item-based collaborative filtering over binary occurrence vectors.
//!
//! The model is a sparse symmetric cosine matrix over every token seen in
//! training, actual and virtual alike. Only actual items are ever recommended.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::davi::TokenSession;
use crate::domain::is_virtual;
use crate::engine::{rank, Scored};
use crate::error::{Error, Result};

const MODEL_HEADER: &str = "# ctxrec similarity model v1";

/// What one position of an occurrence vector stands for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoOccurrenceUnit {
    #[default]
    Session,
    User,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfParams {
    pub unit: CoOccurrenceUnit,
    /// Only the `k` observables most similar to a candidate contribute to its
    /// score. `None` uses all of them.
    pub neighbors: Option<usize>,
}

/// Cosine of two binary vectors given as the sets of positions holding a 1.
pub fn cosine_similarity<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedSimilarity);
    }
    let common = a.intersection(b).count();
    Ok(cosine_from_counts(common as u32, a.len() as u32, b.len() as u32))
}

#[inline]
fn cosine_from_counts(common: u32, a: u32, b: u32) -> f64 {
    common as f64 / (a as f64 * b as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    unit: CoOccurrenceUnit,
    /// Sorted, so dense ids order like tokens.
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
    occurrences: Vec<u32>,
    /// Non-zero similarities per token, sorted by neighbour id, diagonal omitted.
    rows: Vec<Vec<(u32, f64)>>,
}

impl SimilarityModel {
    pub fn build(sessions: &[TokenSession], unit: CoOccurrenceUnit) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::NoSessions);
        }
        let vectors = occurrence_positions(sessions, unit);

        let tokens: Vec<String> = vectors
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<&str>>()
            .into_iter()
            .map(str::to_owned)
            .collect();
        let lookup: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(id, token)| (token.clone(), id as u32))
            .collect();

        let units: Vec<Vec<u32>> = vectors
            .iter()
            .map(|unit| {
                let mut ids: Vec<u32> = unit.iter().map(|t| lookup[*t]).collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        let mut postings: Vec<Vec<u32>> = vec![Vec::new(); tokens.len()];
        for (pos, unit) in units.iter().enumerate() {
            for &id in unit {
                postings[id as usize].push(pos as u32);
            }
        }
        let occurrences: Vec<u32> = postings.iter().map(|p| p.len() as u32).collect();

        let n = tokens.len();
        let rows = (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0u32; n], Vec::new()),
                |(counts, touched), i| {
                    for &pos in &postings[i] {
                        for &j in &units[pos as usize] {
                            if j as usize == i {
                                continue;
                            }
                            if counts[j as usize] == 0 {
                                touched.push(j);
                            }
                            counts[j as usize] += 1;
                        }
                    }
                    touched.sort_unstable();
                    let row: Vec<(u32, f64)> = touched
                        .iter()
                        .map(|&j| {
                            let common = std::mem::take(&mut counts[j as usize]);
                            (j, cosine_from_counts(common, occurrences[i], occurrences[j as usize]))
                        })
                        .collect();
                    touched.clear();
                    row
                },
            )
            .collect();

        Ok(SimilarityModel {
            unit,
            tokens,
            lookup,
            occurrences,
            rows,
        })
    }

    pub fn unit(&self) -> CoOccurrenceUnit {
        self.unit
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.lookup.contains_key(token)
    }

    pub fn occurrences(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).map(|&id| self.occurrences[id as usize])
    }

    /// Number of stored (unordered) pairs.
    pub fn pair_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Stored entries with `a < b`, in token order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(i, row)| {
            row.iter()
                .filter(move |(j, _)| *j as usize > i)
                .map(move |&(j, sim)| (self.tokens[i].as_str(), self.tokens[j as usize].as_str(), sim))
        })
    }

    /// `sim(a, b)`: 1 on the diagonal, 0 for unknown tokens or pairs that
    /// never co-occurred.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        match (self.lookup.get(a), self.lookup.get(b)) {
            (Some(&i), Some(&j)) if i == j => 1.0,
            (Some(&i), Some(&j)) => self.entry(i, j),
            _ => 0.0,
        }
    }

    fn entry(&self, i: u32, j: u32) -> f64 {
        let row = &self.rows[i as usize];
        row.binary_search_by_key(&j, |&(k, _)| k).map_or(0.0, |pos| row[pos].1)
    }

    /// Mean similarity between `candidate` and the observables, restricted to
    /// the `neighbors` most similar observables when set.
    pub fn score_candidate(&self, candidate: &str, observables: &[String], neighbors: Option<usize>) -> f64 {
        let observables = dedup(observables);
        let Some(&cand) = self.lookup.get(candidate) else {
            return 0.0;
        };
        if observables.is_empty() || observables.contains(&candidate) {
            return 0.0;
        }
        let sims = observables
            .iter()
            .map(|o| self.lookup.get(*o).map_or(0.0, |&id| self.entry(cand, id)));
        match neighbors {
            None => sims.fold(0.0, |acc, s| acc + s) / observables.len() as f64,
            Some(k) => {
                let mut sims: Vec<f64> = sims.collect();
                sims.sort_by(|a, b| b.total_cmp(a));
                let take = k.min(sims.len());
                if take == 0 {
                    return 0.0;
                }
                sims[..take].iter().fold(0.0, |acc, s| acc + s) / take as f64
            }
        }
    }

    /// Top-N actual items by [`score_candidate`](Self::score_candidate),
    /// excluding observables and zero scores. Ties go to the smaller token.
    pub fn recommend_topn(&self, observables: &[String], n: usize, neighbors: Option<usize>) -> Vec<Scored> {
        let observables = dedup(observables);
        if observables.is_empty() || n == 0 {
            return Vec::new();
        }
        let ids: Vec<Option<u32>> = observables.iter().map(|o| self.lookup.get(*o).copied()).collect();
        let excluded: HashSet<u32> = ids.iter().flatten().copied().collect();
        let eligible = |j: u32| !excluded.contains(&j) && !is_virtual(&self.tokens[j as usize]);

        // Additions happen in observable order, matching score_candidate bit for bit.
        let scored: Vec<(u32, f64)> = match neighbors {
            None => {
                let mut sums: HashMap<u32, f64> = HashMap::new();
                for id in ids.iter().flatten() {
                    for &(j, sim) in &self.rows[*id as usize] {
                        if eligible(j) {
                            *sums.entry(j).or_insert(0.0) += sim;
                        }
                    }
                }
                let denom = observables.len() as f64;
                sums.into_iter().map(|(j, s)| (j, s / denom)).collect()
            }
            Some(k) => {
                let take = k.min(observables.len());
                if take == 0 {
                    return Vec::new();
                }
                let mut sims: HashMap<u32, Vec<f64>> = HashMap::new();
                for id in ids.iter().flatten() {
                    for &(j, sim) in &self.rows[*id as usize] {
                        if eligible(j) {
                            sims.entry(j).or_default().push(sim);
                        }
                    }
                }
                sims.into_iter()
                    .map(|(j, mut s)| {
                        s.sort_by(|a, b| b.total_cmp(a));
                        let sum = s.iter().take(take).fold(0.0, |acc, x| acc + x);
                        (j, sum / take as f64)
                    })
                    .collect()
            }
        };

        rank(
            scored
                .into_iter()
                .filter(|&(_, score)| score > 0.0)
                .map(|(j, score)| Scored {
                    item: self.tokens[j as usize].clone(),
                    score,
                }),
            n,
        )
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MODEL_HEADER}")?;
        let unit = match self.unit {
            CoOccurrenceUnit::Session => "session",
            CoOccurrenceUnit::User => "user",
        };
        writeln!(out, "unit\t{unit}")?;
        writeln!(out, "tokens\t{}", self.tokens.len())?;
        for (token, occ) in self.tokens.iter().zip(&self.occurrences) {
            writeln!(out, "{token}\t{occ}")?;
        }
        writeln!(out, "pairs\t{}", self.pair_count())?;
        for (a, b, sim) in self.pairs() {
            writeln!(out, "{a}\t{b}\t{sim}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((no, line)) => Ok((no, line?)),
                None => Err(Error::model_format(0, "unexpected end of file")),
            }
        };
        let (no, header) = next()?;
        if header.trim_end() != MODEL_HEADER {
            return Err(Error::model_format(no, "not a similarity model"));
        }
        let (no, line) = next()?;
        let unit = match line.split_once('\t') {
            Some(("unit", "session")) => CoOccurrenceUnit::Session,
            Some(("unit", "user")) => CoOccurrenceUnit::User,
            _ => return Err(Error::model_format(no, "expected `unit`")),
        };
        let (no, line) = next()?;
        let count = section_count(no, &line, "tokens")?;
        let mut tokens = Vec::with_capacity(count);
        let mut occurrences = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, line) = next()?;
            let (token, occ) = line
                .split_once('\t')
                .ok_or_else(|| Error::model_format(no, "expected `token<TAB>occurrences`"))?;
            let occ: u32 = occ
                .parse()
                .map_err(|_| Error::model_format(no, "bad occurrence count"))?;
            if occ == 0 {
                return Err(Error::model_format(no, "token with zero occurrences"));
            }
            tokens.push(token.to_owned());
            occurrences.push(occ);
        }
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::model_format(no, "token table must be strictly sorted"));
        }
        let lookup: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(id, t)| (t.clone(), id as u32))
            .collect();

        let (no, line) = next()?;
        let pairs = section_count(no, &line, "pairs")?;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); tokens.len()];
        for _ in 0..pairs {
            let (no, line) = next()?;
            let mut fields = line.split('\t');
            let (Some(a), Some(b), Some(sim), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::model_format(no, "expected `token_i<TAB>token_j<TAB>similarity`"));
            };
            let (Some(&i), Some(&j)) = (lookup.get(a), lookup.get(b)) else {
                return Err(Error::model_format(no, "pair references an unknown token"));
            };
            let sim: f64 = sim.parse().map_err(|_| Error::model_format(no, "bad similarity"))?;
            if i == j || !(sim > 0.0 && sim <= 1.0) {
                return Err(Error::model_format(no, "similarity must be in (0, 1] off the diagonal"));
            }
            rows[i as usize].push((j, sim));
            rows[j as usize].push((i, sim));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::model_format(0, "duplicate pair"));
            }
        }
        Ok(SimilarityModel {
            unit,
            tokens,
            lookup,
            occurrences,
            rows,
        })
    }
}

fn section_count(no: usize, line: &str, name: &str) -> Result<usize> {
    match line.split_once('\t') {
        Some((key, n)) if key == name => n
            .parse()
            .map_err(|_| Error::model_format(no, format!("bad `{name}` count"))),
        _ => Err(Error::model_format(no, format!("expected `{name}` section"))),
    }
}

fn dedup(observables: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    observables
        .iter()
        .map(String::as_str)
        .filter(|o| seen.insert(*o))
        .collect()
}

/// Deduplicated token lists, one per vector position.
fn occurrence_positions(sessions: &[TokenSession], unit: CoOccurrenceUnit) -> Vec<Vec<&str>> {
    let mut vectors: Vec<Vec<&str>> = Vec::new();
    let mut seen: Vec<HashSet<&str>> = Vec::new();
    let mut by_user: HashMap<&str, usize> = HashMap::new();
    for session in sessions {
        let pos = match unit {
            CoOccurrenceUnit::Session => {
                vectors.push(Vec::new());
                seen.push(HashSet::new());
                vectors.len() - 1
            }
            CoOccurrenceUnit::User => *by_user.entry(&session.user_id).or_insert_with(|| {
                vectors.push(Vec::new());
                seen.push(HashSet::new());
                vectors.len() - 1
            }),
        };
        for token in &session.tokens {
            if seen[pos].insert(token) {
                vectors[pos].push(token);
            }
        }
    }
    vectors
}

/// Item-based CF ready to serve recommendations.
#[derive(Debug, Clone, PartialEq)]
pub struct CfRecommender {
    pub model: SimilarityModel,
    pub neighbors: Option<usize>,
}

impl CfRecommender {
    pub fn train(sessions: &[TokenSession], params: &CfParams) -> Result<Self> {
        Ok(CfRecommender {
            model: SimilarityModel::build(sessions, params.unit)?,
            neighbors: params.neighbors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

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

    fn obs(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    fn toy() -> SimilarityModel {
        SimilarityModel::build(
            &sessions(&[&["A", "B"], &["A", "B"], &["A", "C"]]),
            CoOccurrenceUnit::Session,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let all: BTreeSet<_> = ["s1", "s2", "s3"].into();
        assert_eq!(cosine_similarity(&all, &all).unwrap(), 1.0);
        assert_eq!(
            cosine_similarity(&BTreeSet::from(["s1"]), &BTreeSet::from(["s2"])).unwrap(),
            0.0
        );
        let a = BTreeSet::from(["s1", "s2"]);
        let b = BTreeSet::from(["s2", "s3"]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.5);
        assert!(matches!(
            cosine_similarity(&BTreeSet::<u8>::new(), &a.iter().map(|_| 1u8).collect()),
            Err(Error::UndefinedSimilarity)
        ));
    }

    #[test]
    fn toy_matrix() {
        let m = toy();
        assert!((m.similarity("A", "B") - 2.0 / 6f64.sqrt()).abs() < 1e-12);
        assert!((m.similarity("A", "C") - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.similarity("B", "C"), 0.0);
        assert_eq!(m.pair_count(), 2);
        assert_eq!(m.similarity("A", "A"), 1.0);
    }

    #[test]
    fn virtual_rows_and_columns() {
        let m = SimilarityModel::build(
            &sessions(&[&["A", "ctx:day=05"], &["B", "ctx:day=05"]]),
            CoOccurrenceUnit::Session,
        )
        .unwrap();
        assert!((m.similarity("A", "ctx:day=05") - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.similarity("A", "B"), 0.0);
        let recs = m.recommend_topn(&obs(&["B", "ctx:day=05"]), 5, None);
        assert_eq!(recs.iter().map(|s| s.item.as_str()).collect::<Vec<_>>(), ["A"]);
    }

    #[test]
    fn singleton_model() {
        let m = SimilarityModel::build(&sessions(&[&["A"]]), CoOccurrenceUnit::Session).unwrap();
        assert_eq!(m.tokens(), ["A"]);
        assert_eq!(m.pair_count(), 0);
        assert!(matches!(
            SimilarityModel::build(&[], CoOccurrenceUnit::Session),
            Err(Error::NoSessions)
        ));
    }

    #[test]
    fn scoring() {
        let m = toy();
        let ab = 2.0 / 6f64.sqrt();
        let ac = 1.0 / 3f64.sqrt();
        assert!((m.score_candidate("A", &obs(&["B"]), None) - ab).abs() < 1e-12);
        assert!((m.score_candidate("A", &obs(&["B", "C"]), None) - (ab + ac) / 2.0).abs() < 1e-12);
        assert!((m.score_candidate("A", &obs(&["B", "C"]), None) - 0.6969).abs() < 1e-4);
        assert_eq!(m.score_candidate("C", &obs(&["B"]), None), 0.0);
        assert_eq!(m.score_candidate("Z", &obs(&["B"]), None), 0.0);
        // k = 1 keeps only the best neighbour.
        assert!((m.score_candidate("A", &obs(&["B", "C"]), Some(1)) - ab).abs() < 1e-12);
    }

    #[test]
    fn recommendations() {
        let m = toy();
        let recs = m.recommend_topn(&obs(&["B"]), 1, None);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].item, "A");
        assert!(m.recommend_topn(&obs(&["A", "B", "C"]), 3, None).is_empty());
        // C has no neighbour in {B}, so only A is scorable.
        assert_eq!(m.recommend_topn(&obs(&["B"]), 5, None).len(), 1);
    }

    #[test]
    fn user_level_vectors_merge_sessions() {
        let mut s = sessions(&[&["A"], &["B"], &["A", "C"]]);
        s[1].user_id = "u0".into();
        let m = SimilarityModel::build(&s, CoOccurrenceUnit::User).unwrap();
        // User u0 holds {A, B}; u2 holds {A, C}.
        assert!((m.similarity("A", "B") - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.occurrences("A"), Some(2));
    }

    #[test]
    fn serialization_round_trip() {
        let m = SimilarityModel::build(
            &sessions(&[&["A", "B", "ctx:day=01"], &["A", "C"], &["B", "C", "ctx:day=02"]]),
            CoOccurrenceUnit::Session,
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("A\tB\t0.5\n"));
        let back = SimilarityModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_corrupt_models() {
        assert!(SimilarityModel::read_from("garbage\n".as_bytes()).is_err());
        let text = format!("{MODEL_HEADER}\nunit\tsession\ntokens\t1\nA\t1\npairs\t1\nA\tB\t0.5\n");
        assert!(matches!(
            SimilarityModel::read_from(text.as_bytes()),
            Err(Error::ModelFormat { line: 6, .. })
        ));
    }

    fn arb_sessions() -> impl Strategy<Value = Vec<TokenSession>> {
        proptest::collection::vec(proptest::collection::vec(0u8..15, 1..6), 1..30).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, ts)| TokenSession {
                    id: format!("s{i}"),
                    user_id: format!("u{}", i % 7),
                    tokens: ts
                        .into_iter()
                        .map(|t| if t < 3 { format!("ctx:d={t}") } else { format!("i{t}") })
                        .collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(s in arb_sessions()) {
            let m = SimilarityModel::build(&s, CoOccurrenceUnit::Session).unwrap();
            for (a, b, sim) in m.pairs() {
                prop_assert!(sim > 0.0 && sim <= 1.0);
                prop_assert_eq!(m.similarity(a, b).to_bits(), m.similarity(b, a).to_bits());
            }
        }

        #[test]
        fn recommendations_are_pure(s in arb_sessions(), o in proptest::collection::vec(0u8..15, 1..4), k in proptest::option::of(1usize..4)) {
            let m = SimilarityModel::build(&s, CoOccurrenceUnit::Session).unwrap();
            let o: Vec<String> = o.into_iter().map(|t| if t < 3 { format!("ctx:d={t}") } else { format!("i{t}") }).collect();
            let recs = m.recommend_topn(&o, 20, k);
            for r in &recs {
                prop_assert!(!is_virtual(&r.item));
                prop_assert!(!o.contains(&r.item));
                prop_assert_eq!(r.score.to_bits(), m.score_candidate(&r.item, &o, k).to_bits());
            }
        }

        #[test]
        fn removing_a_virtual_observable_restores_scores(s in arb_sessions(), o in proptest::collection::btree_set(3u8..15, 1..4)) {
            let m = SimilarityModel::build(&s, CoOccurrenceUnit::Session).unwrap();
            let base: Vec<String> = o.iter().map(|t| format!("i{t}")).collect();
            let mut with_ctx = base.clone();
            with_ctx.push("ctx:d=1".into());
            let n = base.len() as f64;
            for cand in m.tokens().iter().filter(|t| !is_virtual(t) && !base.contains(t)) {
                let b = m.score_candidate(cand, &base, None);
                let c = m.score_candidate(cand, &with_ctx, None);
                // The extra term enters only through the virtual token's row.
                let expected = (b * n + m.similarity(cand, "ctx:d=1")) / (n + 1.0);
                prop_assert!((c - expected).abs() < 1e-12);
                prop_assert_eq!(m.score_candidate(cand, &base, None).to_bits(), b.to_bits());
            }
        }
    }
}
