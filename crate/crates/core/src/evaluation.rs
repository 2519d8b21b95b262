//! Ranking evaluation.
//!
//! Two protocols:
//!
//! - `TypeMap`: every positive (entity, type) pair gets up to `n` random
//!   (entity, type) negatives that are not positive anywhere in the dataset.
//!   Positives and negatives are pooled per type, each pool is ranked by
//!   score, and MAP is the mean of the per-type average precisions.
//! - `RelationRank`: every positive (row, relation) is ranked against the same
//!   relation paired with other rows (filtered). For rows named
//!   `subject|object` only rows sharing the subject compete, i.e. the object is
//!   replaced. Reports MRR x 100 and Hits@k.
//!
//! Ties always rank the positive below every tied negative.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, ObservedSet};
use crate::data::{ColumnId, DatasetSplit, RowId, Source, Triple, Vocabulary};
use crate::math::dot_unchecked;
use crate::model::Model;
use crate::{par, seeded_rng, Error, Result};

/// Separates subject and object in entity-pair row names.
pub const PAIR_SEPARATOR: char = '|';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    TypeMap,
    RelationRank,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::TypeMap => "type-map",
            EvalMode::RelationRank => "relation-rank",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type-map" | "type" => Ok(EvalMode::TypeMap),
            "relation-rank" | "relation" => Ok(EvalMode::RelationRank),
            _ => Err(Error::Config(format!("unknown evaluation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub mode: EvalMode,
    /// Negatives per positive. `None` under `RelationRank` means every
    /// eligible row.
    pub negatives_per_positive: Option<usize>,
    pub hits_k: usize,
    /// `RelationRank` only: candidate rows must have TEXT evidence.
    pub filter_text_rows: bool,
    pub seed: u64,
}

impl EvalProtocol {
    pub fn type_map(seed: u64) -> Self {
        Self {
            mode: EvalMode::TypeMap,
            negatives_per_positive: Some(100),
            hits_k: 10,
            filter_text_rows: false,
            seed,
        }
    }

    pub fn relation_rank(seed: u64) -> Self {
        Self {
            mode: EvalMode::RelationRank,
            negatives_per_positive: None,
            hits_k: 10,
            filter_text_rows: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hits_k == 0 {
            return Err(Error::Config("hits_k must be positive".into()));
        }
        if self.mode == EvalMode::TypeMap && self.negatives_per_positive.is_none() {
            return Err(Error::Config("type-map evaluation needs a negative count".into()));
        }
        Ok(())
    }
}

/// Everything negative generation needs to know about the dataset.
#[derive(Debug, Clone)]
pub struct Universe {
    positives: HashSet<(RowId, ColumnId)>,
    kb_columns: Vec<ColumnId>,
    all_rows: Vec<RowId>,
    text_rows: Vec<RowId>,
    /// Subject key of each pair-named row.
    subjects: Vec<Option<u32>>,
    by_subject: HashMap<u32, Vec<RowId>>,
}

impl Universe {
    /// Positives are every triple of the split plus the retained evidence of
    /// unseen rows.
    pub fn new(vocab: &Vocabulary, split: &DatasetSplit) -> Self {
        let mut positives: HashSet<(RowId, ColumnId)> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .map(|t| (t.row, t.column))
            .collect();
        let mut text_rows = Vec::new();
        for (r, cols) in split.observed.iter().enumerate() {
            let row = RowId(r as u32);
            positives.extend(cols.iter().map(|&c| (row, c)));
            if cols.iter().any(|&c| vocab.column_source(c) == Source::Text) {
                text_rows.push(row);
            }
        }

        let mut subject_ids: HashMap<&str, u32> = HashMap::new();
        let mut subjects = Vec::with_capacity(vocab.n_rows());
        let mut by_subject: HashMap<u32, Vec<RowId>> = HashMap::new();
        for r in 0..vocab.n_rows() {
            let row = RowId(r as u32);
            let subject = vocab.row_name(row).split_once(PAIR_SEPARATOR).map(|(s, _)| {
                let next = subject_ids.len() as u32;
                *subject_ids.entry(s).or_insert(next)
            });
            if let Some(s) = subject {
                by_subject.entry(s).or_default().push(row);
            }
            subjects.push(subject);
        }

        Self {
            positives,
            kb_columns: vocab.kb_columns().collect(),
            all_rows: (0..vocab.n_rows() as u32).map(RowId).collect(),
            text_rows,
            subjects,
            by_subject,
        }
    }

    pub fn is_positive(&self, row: RowId, col: ColumnId) -> bool {
        self.positives.contains(&(row, col))
    }

    pub fn kb_columns(&self) -> &[ColumnId] {
        &self.kb_columns
    }

    /// Rows with at least one TEXT column among their evidence.
    pub fn text_rows(&self) -> &[RowId] {
        &self.text_rows
    }
}

/// Generated negatives for one positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negatives {
    pub cells: Vec<(RowId, ColumnId)>,
    /// How many fewer than requested could be produced.
    pub shortfall: usize,
}

/// Negatives for `positive`. Under `TypeMap` the entities are drawn from
/// `entities`; under `RelationRank` that argument is ignored.
pub fn generate_negatives<R: Rng + ?Sized>(
    positive: &Triple,
    protocol: &EvalProtocol,
    universe: &Universe,
    entities: &[RowId],
    rng: &mut R,
) -> Negatives {
    match protocol.mode {
        EvalMode::TypeMap => {
            let n = protocol.negatives_per_positive.unwrap_or(0);
            type_negatives(n, universe, entities, rng)
        }
        EvalMode::RelationRank => relation_negatives(positive, protocol, universe, rng),
    }
}

fn type_negatives<R: Rng + ?Sized>(n: usize, universe: &Universe, entities: &[RowId], rng: &mut R) -> Negatives {
    let types = universe.kb_columns();
    let space = entities.len() * types.len();
    let mut cells = Vec::with_capacity(n);
    if space == 0 || n == 0 {
        return Negatives { cells, shortfall: n };
    }
    if space <= 4 * n {
        let mut all: Vec<(RowId, ColumnId)> = entities
            .iter()
            .flat_map(|&e| types.iter().map(move |&t| (e, t)))
            .filter(|&(e, t)| !universe.is_positive(e, t))
            .collect();
        all.shuffle(rng);
        all.truncate(n);
        cells = all;
    } else {
        let mut seen = HashSet::with_capacity(n);
        let max_draws = 50 * n.max(20);
        for _ in 0..max_draws {
            if cells.len() == n {
                break;
            }
            let e = entities[rng.gen_range(0..entities.len())];
            let t = types[rng.gen_range(0..types.len())];
            if !universe.is_positive(e, t) && seen.insert((e, t)) {
                cells.push((e, t));
            }
        }
    }
    Negatives {
        shortfall: n - cells.len(),
        cells,
    }
}

fn relation_negatives<R: Rng + ?Sized>(
    positive: &Triple,
    protocol: &EvalProtocol,
    universe: &Universe,
    rng: &mut R,
) -> Negatives {
    let pool: &[RowId] = match universe.subjects.get(positive.row.index()).copied().flatten() {
        Some(s) => &universe.by_subject[&s],
        None => &universe.all_rows,
    };
    let text: Option<BTreeSet<RowId>> = protocol
        .filter_text_rows
        .then(|| universe.text_rows.iter().copied().collect());
    let mut rows: Vec<RowId> = pool
        .iter()
        .copied()
        .filter(|&r| r != positive.row)
        .filter(|r| text.as_ref().is_none_or(|t| t.contains(r)))
        .filter(|&r| !universe.is_positive(r, positive.column))
        .collect();
    let mut shortfall = 0;
    if let Some(n) = protocol.negatives_per_positive {
        if rows.len() > n {
            rows.shuffle(rng);
            rows.truncate(n);
            rows.sort_unstable();
        } else {
            shortfall = n - rows.len();
        }
    }
    Negatives {
        cells: rows.into_iter().map(|r| (r, positive.column)).collect(),
        shortfall,
    }
}

/// Mean over positives of the precision at each positive's position.
pub fn average_precision(ranked: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, &label) in ranked.iter().enumerate() {
        if label {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedAp);
    }
    Ok(total / hits as f64)
}

/// `(100 * mean(1/rank), fraction of ranks <= k)`; zeros for no ranks.
pub fn mrr_and_hits(ranks: &[usize], k: usize) -> (f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    (100.0 * mrr, hits)
}

/// AP from the 1-based ranks of a pool's positives.
fn ap_from_ranks(ranks: &mut [usize]) -> f64 {
    ranks.sort_unstable();
    ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| (i + 1) as f64 / r as f64)
        .sum::<f64>()
        / ranks.len() as f64
}

/// One ranked positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: ColumnId,
    pub positive: RowId,
    pub rank: usize,
    pub num_candidates: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub mode: EvalMode,
    pub map: Option<f64>,
    pub mrr_x100: Option<f64>,
    pub hits_at_k: Option<f64>,
    pub hits_k: usize,
    pub n_positives: usize,
    /// Distinct rows scored with the zero vector because they have no
    /// learned embedding.
    pub cold_start_rows: usize,
    pub negative_shortfall: usize,
    #[serde(skip)]
    pub queries: Vec<QueryRecord>,
}

/// Aggregate numbers recomputed from per-query records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recomputed {
    pub map: Option<f64>,
    pub mrr_x100: Option<f64>,
    pub hits_at_k: Option<f64>,
}

impl RankingReport {
    /// MAP under `TypeMap`, MRR (as a fraction) under `RelationRank`.
    pub fn primary_metric(&self) -> Option<f64> {
        match self.mode {
            EvalMode::TypeMap => self.map,
            EvalMode::RelationRank => self.mrr_x100.map(|m| m / 100.0),
        }
    }

    pub fn recompute(&self) -> Recomputed {
        match self.mode {
            EvalMode::TypeMap => {
                let mut by_type: BTreeMap<ColumnId, Vec<usize>> = BTreeMap::new();
                for q in &self.queries {
                    by_type.entry(q.query).or_default().push(q.rank);
                }
                let map = (!by_type.is_empty()).then(|| {
                    by_type.values_mut().map(|r| ap_from_ranks(r)).sum::<f64>() / by_type.len() as f64
                });
                Recomputed {
                    map,
                    mrr_x100: None,
                    hits_at_k: None,
                }
            }
            EvalMode::RelationRank => {
                let ranks: Vec<usize> = self.queries.iter().map(|q| q.rank).collect();
                let (mrr, hits) = mrr_and_hits(&ranks, self.hits_k);
                let some = !ranks.is_empty();
                Recomputed {
                    map: None,
                    mrr_x100: some.then_some(mrr),
                    hits_at_k: some.then_some(hits),
                }
            }
        }
    }

    /// `query<TAB>positive<TAB>rank<TAB>num_candidates`, with a header.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> Result<()> {
        writeln!(w, "query\tpositive\trank\tnum_candidates")?;
        for q in &self.queries {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                vocab.column_name(q.query),
                vocab.row_name(q.positive),
                q.rank,
                q.num_candidates
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for RankingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |x: Option<f64>, scale: f64| x.map_or("n/a".to_owned(), |v| format!("{:.2}", v * scale));
        write!(
            f,
            "MAP {}  MRRx100 {}  Hits@{} {}  ({} positives",
            show(self.map, 100.0),
            show(self.mrr_x100, 1.0),
            self.hits_k,
            show(self.hits_at_k, 100.0),
            self.n_positives
        )?;
        if self.cold_start_rows > 0 {
            write!(f, ", {} cold-start rows", self.cold_start_rows)?;
        }
        write!(f, ")")
    }
}

/// Column vectors of every role, computed once per evaluation.
struct Scorer<'a> {
    model: &'a Model,
    observed: &'a [Vec<ColumnId>],
    query: Vec<Vec<f64>>,
    key: Vec<Vec<f64>>,
    output: Option<Vec<Vec<f64>>>,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a Model, observed: &'a [Vec<ColumnId>]) -> Result<Self> {
        let cols: Vec<ColumnId> = (0..model.n_columns() as u32).map(ColumnId).collect();
        let roles = model.roles();
        let encode = |e: usize| model.encoders()[e].encode_batch(model.tables(), &cols, model.column_tokens());
        let key = encode(roles.key)?;
        let query = if roles.query == roles.key { key.clone() } else { encode(roles.query)? };
        let output = if roles.is_tied() { None } else { Some(encode(roles.output)?) };
        Ok(Self {
            model,
            observed,
            query,
            key,
            output,
        })
    }

    /// Logit plus whether the row took the cold-start path.
    fn score(&self, row: RowId, col: ColumnId) -> (f64, bool) {
        let q = &self.query[col.index()];
        if let Some(t) = self.model.row_table() {
            if !self.model.has_row_embedding(row) {
                return (0.0, true);
            }
            return (dot_unchecked(self.model.tables()[t].row(row.index()), q), false);
        }
        let evidence: Vec<ColumnId> = self.observed[row.index()]
            .iter()
            .copied()
            .filter(|&c| c != col)
            .collect();
        let keys = evidence.iter().map(|c| self.key[c.index()].clone()).collect();
        let outputs = match &self.output {
            Some(o) => evidence.iter().map(|c| o[c.index()].clone()).collect(),
            None => evidence.iter().map(|c| self.key[c.index()].clone()).collect(),
        };
        let obs = ObservedSet::new(evidence, keys, outputs);
        let agg = aggregate(self.model.aggregator(), &obs, q, self.model.dim());
        (dot_unchecked(&agg.vector, q), false)
    }
}

/// Ranks `positives` under `protocol`. The model is only read.
pub fn evaluate(
    model: &Model,
    split: &DatasetSplit,
    universe: &Universe,
    protocol: &EvalProtocol,
    positives: &[Triple],
) -> Result<RankingReport> {
    protocol.validate()?;
    let scorer = Scorer::new(model, &split.observed)?;
    let entities: Vec<RowId> = positives
        .iter()
        .map(|t| t.row)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let negatives: Vec<Negatives> = par::map_indexed(positives, |i, t| {
        let mut rng = seeded_rng(protocol.seed, 0xe7a1, i as u64);
        generate_negatives(t, protocol, universe, &entities, &mut rng)
    });
    let shortfall: usize = negatives.iter().map(|n| n.shortfall).sum();
    if shortfall > 0 {
        log::warn!("negative generation fell {shortfall} short of the requested count");
    }

    let mut scored_rows: BTreeSet<RowId> = BTreeSet::new();
    let queries = match protocol.mode {
        EvalMode::RelationRank => {
            let ranked = par::map_indexed(positives, |i, t| {
                let (pos, _) = scorer.score(t.row, t.column);
                let cells = &negatives[i].cells;
                let rank = 1 + cells
                    .iter()
                    .filter(|&&(r, c)| scorer.score(r, c).0 >= pos)
                    .count();
                QueryRecord {
                    query: t.column,
                    positive: t.row,
                    rank,
                    num_candidates: cells.len() + 1,
                    score: pos,
                }
            });
            for (t, n) in positives.iter().zip(&negatives) {
                scored_rows.insert(t.row);
                scored_rows.extend(n.cells.iter().map(|&(r, _)| r));
            }
            ranked
        }
        EvalMode::TypeMap => {
            let mut pools: BTreeMap<ColumnId, BTreeMap<RowId, bool>> = BTreeMap::new();
            for t in positives {
                pools.entry(t.column).or_default().insert(t.row, true);
            }
            for n in &negatives {
                for &(r, c) in &n.cells {
                    if let Some(pool) = pools.get_mut(&c) {
                        pool.entry(r).or_insert(false);
                    }
                }
            }
            for pool in pools.values() {
                scored_rows.extend(pool.keys().copied());
            }
            let pools: Vec<(ColumnId, Vec<(RowId, bool)>)> = pools
                .into_iter()
                .map(|(c, p)| (c, p.into_iter().collect()))
                .collect();
            par::map(&pools, |(col, pool)| rank_pool(&scorer, *col, pool))
                .into_iter()
                .flatten()
                .collect()
        }
    };

    let cold_start_rows = scored_rows.iter().filter(|&&r| !model.has_row_embedding(r)).count();
    let mut report = RankingReport {
        mode: protocol.mode,
        map: None,
        mrr_x100: None,
        hits_at_k: None,
        hits_k: protocol.hits_k,
        n_positives: positives.len(),
        cold_start_rows,
        negative_shortfall: shortfall,
        queries,
    };
    let r = report.recompute();
    report.map = r.map;
    report.mrr_x100 = r.mrr_x100;
    report.hits_at_k = r.hits_at_k;
    Ok(report)
}

/// Scores and ranks one type pool; negatives sort ahead of positives on ties.
fn rank_pool(scorer: &Scorer<'_>, col: ColumnId, pool: &[(RowId, bool)]) -> Vec<QueryRecord> {
    let mut scored: Vec<(f64, bool, RowId)> = pool
        .iter()
        .map(|&(r, label)| (scorer.score(r, col).0, label, r))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    scored
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1)
        .map(|(i, &(score, _, row))| QueryRecord {
            query: col,
            positive: row,
            rank: i + 1,
            num_candidates: scored.len(),
            score,
        })
        .collect()
}

/// Expected MAP of a uniformly random ranking over the same type pools as
/// `report`, estimated with `trials` shuffles.
pub fn random_baseline_map(report: &RankingReport, trials: usize, seed: u64) -> Option<f64> {
    let mut pools: BTreeMap<ColumnId, (usize, usize)> = BTreeMap::new();
    for q in &report.queries {
        let e = pools.entry(q.query).or_insert((0, q.num_candidates));
        e.0 += 1;
    }
    if pools.is_empty() || trials == 0 {
        return None;
    }
    let mut rng = seeded_rng(seed, 0xba5e, 0);
    let mut total = 0.0;
    for _ in 0..trials {
        let mut sum = 0.0;
        for &(n_pos, n) in pools.values() {
            let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
            labels.shuffle(&mut rng);
            sum += average_precision(&labels).expect("pool has a positive");
        }
        total += sum / pools.len() as f64;
    }
    Some(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_dataset;
    use crate::data::SplitRatios;

    #[test]
    fn average_precision_examples() {
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[true, true, false]).unwrap(), 1.0);
        let mut single = vec![false; 9];
        single[3] = true;
        assert!((average_precision(&single).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(average_precision(&[false, false]), Err(Error::UndefinedAp)));
    }

    #[test]
    fn mrr_and_hits_examples() {
        let (mrr, hits) = mrr_and_hits(&[1, 2, 4], 10);
        assert!((mrr - 175.0 / 3.0).abs() < 1e-9);
        assert_eq!(hits, 1.0);
        assert_eq!(mrr_and_hits(&[3], 10).1, 1.0);
        assert_eq!(mrr_and_hits(&[1, 1, 1], 10).0, 100.0);
        assert_eq!(mrr_and_hits(&[11], 10).1, 0.0);
    }

    #[test]
    fn ap_from_ranks_matches_label_form() {
        let labels = [false, true, false, false, true, true];
        let mut ranks: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l)
            .map(|(i, _)| i + 1)
            .collect();
        ranks.reverse();
        assert!((ap_from_ranks(&mut ranks) - average_precision(&labels).unwrap()).abs() < 1e-15);
    }

    fn fixture() -> (Vocabulary, DatasetSplit) {
        let mut v = Vocabulary::new();
        let mut ts = Vec::new();
        for r in 0..3 {
            let row = v.add_row(&format!("e{r}"));
            let c = v.add_column(&format!("/t{r}"), Source::Kb).unwrap();
            ts.push(Triple::new(row, c, Source::Kb));
            let p = v.add_column(&format!("word{r}"), Source::Text).unwrap();
            ts.push(Triple::new(row, p, Source::Text));
        }
        let s = split_dataset(&v, &ts, SplitRatios::new(1.0, 0.0, 0.0), 0).unwrap();
        (v, s)
    }

    #[test]
    fn type_negatives_are_filtered_and_report_shortfall() {
        let (v, s) = fixture();
        let u = Universe::new(&v, &s);
        let p = EvalProtocol::type_map(0);
        let entities: Vec<RowId> = (0..3).map(RowId).collect();
        let neg = generate_negatives(&s.train[0], &p, &u, &entities, &mut seeded_rng(0, 0, 0));
        // 3 entities x 3 types minus 3 positives
        assert_eq!(neg.cells.len(), 6);
        assert_eq!(neg.shortfall, 94);
        assert!(neg.cells.iter().all(|&(r, c)| !u.is_positive(r, c)));
    }

    #[test]
    fn relation_negatives_exclude_self_and_positives() {
        let (v, s) = fixture();
        let u = Universe::new(&v, &s);
        let p = EvalProtocol::relation_rank(0);
        let t = Triple::new(RowId(0), ColumnId(0), Source::Kb);
        let neg = generate_negatives(&t, &p, &u, &[], &mut seeded_rng(0, 0, 0));
        assert_eq!(neg.cells, vec![(RowId(1), ColumnId(0)), (RowId(2), ColumnId(0))]);
        let capped = EvalProtocol {
            negatives_per_positive: Some(100),
            ..p
        };
        let neg = generate_negatives(&t, &capped, &u, &[], &mut seeded_rng(0, 0, 0));
        assert_eq!(neg.shortfall, 98);
    }

    #[test]
    fn pair_rows_replace_the_object() {
        let mut v = Vocabulary::new();
        let mut ts = Vec::new();
        for name in ["a|b", "a|c", "a|d", "x|b"] {
            let row = v.add_row(name);
            let p = v.add_column("says", Source::Text).unwrap();
            ts.push(Triple::new(row, p, Source::Text));
        }
        let rel = v.add_column("/rel", Source::Kb).unwrap();
        ts.push(Triple::new(RowId(0), rel, Source::Kb));
        ts.push(Triple::new(RowId(2), rel, Source::Kb));
        let s = split_dataset(&v, &ts, SplitRatios::new(1.0, 0.0, 0.0), 0).unwrap();
        let u = Universe::new(&v, &s);
        let t = Triple::new(RowId(0), rel, Source::Kb);
        let neg = generate_negatives(&t, &EvalProtocol::relation_rank(0), &u, &[], &mut seeded_rng(0, 0, 0));
        assert_eq!(neg.cells, vec![(RowId(1), rel)]);
    }

    #[test]
    fn constant_scores_rank_pessimistically() {
        let (v, s) = fixture();
        let u = Universe::new(&v, &s);
        let cfg = crate::model::ModelConfig::new(4, crate::aggregation::AggregatorKind::MeanPool);
        let m = Model::new(cfg, &v, vec![], crate::model::Init::Zeros).unwrap();
        let kb: Vec<Triple> = s.train.iter().copied().filter(|t| t.source == Source::Kb).collect();
        let rep = evaluate(&m, &s, &u, &EvalProtocol::relation_rank(0), &kb).unwrap();
        assert!(rep.queries.iter().all(|q| q.rank == 3 && q.num_candidates == 3));
        assert!((rep.mrr_x100.unwrap() - 100.0 / 3.0).abs() < 1e-9);

        let rep = evaluate(&m, &s, &u, &EvalProtocol::type_map(0), &kb).unwrap();
        // each type: one positive behind two tied negatives
        assert!((rep.map.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rep.recompute().map, rep.map);
    }
}
