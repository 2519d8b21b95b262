//! Training objectives and per-example backpropagation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, aggregate_backward, build_observed_set, ObservedMode, ObservedSet};
use crate::data::{ColumnId, DatasetSplit, RowId, Triple};
use crate::encoder::Encoded;
use crate::math::{dot_unchecked, log_sigmoid, sigmoid, GradSink};
use crate::model::Model;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Sampled negative log-likelihood.
    Nll,
    /// Pairwise ranking with one negative per positive.
    Bpr,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Nll => "nll",
            Objective::Bpr => "bpr",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(Objective::Nll),
            "bpr" => Ok(Objective::Bpr),
            _ => Err(Error::Config(format!("unknown objective {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub objective: Objective,
    /// Negatives per example under NLL. BPR always uses one.
    pub negatives: usize,
    pub l2: f64,
    /// Cap on evidence columns per training example.
    pub pattern_dropout: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Nll,
            negatives: 200,
            l2: 0.0,
            pattern_dropout: 10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be at least 1".into()));
        }
        if self.pattern_dropout == 0 {
            return Err(Error::Config("pattern_dropout must be at least 1".into()));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(Error::Config(format!("invalid l2 {}", self.l2)));
        }
        Ok(())
    }

    pub fn negatives_per_example(&self) -> usize {
        match self.objective {
            Objective::Nll => self.negatives,
            Objective::Bpr => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub row: RowId,
    pub positive: ColumnId,
    pub negatives: Vec<ColumnId>,
}

/// Draws `k` columns the row does not observe: without replacement when
/// enough exist, with replacement otherwise.
pub fn sample_negatives<R: Rng + ?Sized>(
    observed: &[ColumnId],
    n_columns: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<ColumnId>> {
    let is_observed = |c: u32| observed.binary_search(&ColumnId(c)).is_ok();
    let n_observed = observed.len();
    let pool_size = n_columns.saturating_sub(n_observed);
    if pool_size == 0 {
        return Err(Error::DegenerateRow(format!("row observes all {n_columns} columns")));
    }
    // rejection sampling is cheap while most columns are unobserved
    if pool_size >= 2 * k && pool_size * 2 >= n_columns {
        let mut seen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let c = rng.gen_range(0..n_columns as u32);
            if !is_observed(c) && seen.insert(c) {
                out.push(ColumnId(c));
            }
        }
        return Ok(out);
    }
    let pool: Vec<ColumnId> = (0..n_columns as u32).filter(|&c| !is_observed(c)).map(ColumnId).collect();
    if pool.len() >= k {
        Ok(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
    } else {
        Ok((0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect())
    }
}

/// Builds a training example for a train triple.
pub fn make_example<R: Rng + ?Sized>(
    split: &DatasetSplit,
    triple: &Triple,
    config: &LossConfig,
    rng: &mut R,
) -> Result<TrainingExample> {
    let negatives = sample_negatives(
        split.observed_columns(triple.row),
        split.n_columns,
        config.negatives_per_example(),
        rng,
    )
    .map_err(|e| match e {
        Error::DegenerateRow(m) => Error::DegenerateRow(format!("{}: {m}", triple.row)),
        other => other,
    })?;
    Ok(TrainingExample {
        row: triple.row,
        positive: triple.column,
        negatives,
    })
}

/// Loss value and its derivatives w.r.t. each score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLoss {
    pub loss: f64,
    pub dpos: f64,
    pub dneg: Vec<f64>,
}

/// `-log σ(pos) - Σ log σ(-neg)` on raw scores.
pub fn nll_loss(pos: f64, negs: &[f64]) -> ScoreLoss {
    let mut loss = -log_sigmoid(pos);
    let mut dneg = Vec::with_capacity(negs.len());
    for &n in negs {
        loss -= log_sigmoid(-n);
        dneg.push(sigmoid(n));
    }
    ScoreLoss {
        loss,
        dpos: sigmoid(pos) - 1.0,
        dneg,
    }
}

/// `-log σ(pos - neg)`.
pub fn bpr_loss(pos: f64, neg: f64) -> ScoreLoss {
    let diff = pos - neg;
    let dpos = sigmoid(diff) - 1.0;
    ScoreLoss {
        loss: -log_sigmoid(diff),
        dpos,
        dneg: vec![-dpos],
    }
}

struct Candidate {
    column: ColumnId,
    /// Times the column was drawn (the positive counts once).
    count: f64,
    query: Vec<f64>,
    encoded: Encoded,
}

/// Forward and backward pass for one example. Gradients (unscaled) are
/// added to `sink`; the return value is the example's loss.
///
/// Evidence is the row's observed columns minus the positive, capped by
/// pattern dropout. Duplicate negatives are scored once and weighted by
/// their multiplicity, which leaves loss and gradients unchanged.
pub fn example_loss<R: Rng + ?Sized>(
    model: &Model,
    observed: &[ColumnId],
    example: &TrainingExample,
    config: &LossConfig,
    rng: &mut R,
    sink: &mut GradSink,
) -> Result<f64> {
    let tokens = model.column_tokens();
    let tables = model.tables();
    let roles = model.roles();
    let encoders = model.encoders();
    let query_encoder = &encoders[roles.query];

    let mut counts: BTreeMap<ColumnId, usize> = BTreeMap::new();
    for &c in &example.negatives {
        *counts.entry(c).or_default() += 1;
    }
    let mut candidates = Vec::with_capacity(counts.len() + 1);
    for (column, count) in std::iter::once((example.positive, 1)).chain(counts) {
        let (query, encoded) = query_encoder.encode(tables, column, tokens)?;
        candidates.push(Candidate {
            column,
            count: count as f64,
            query,
            encoded,
        });
    }

    let kind = model.aggregator();
    let d = model.dim();
    let mut dquery: Vec<Vec<f64>> = vec![vec![0.0; d]; candidates.len()];

    if let Some(row_table) = model.row_table() {
        if !model.has_row_embedding(example.row) {
            return Err(Error::UnseenRow(example.row.to_string()));
        }
        let v = tables[row_table].row(example.row.index());
        let scores: Vec<f64> = candidates.iter().map(|c| dot_unchecked(v, &c.query)).collect();
        let (loss, dscores) = objective(config.objective, &scores, &candidates)?;
        let mut dv = vec![0.0; d];
        for (i, c) in candidates.iter().enumerate() {
            for k in 0..d {
                dv[k] += dscores[i] * c.query[k];
                dquery[i][k] = dscores[i] * v[k];
            }
        }
        sink.add(row_table, example.row.index(), &dv);
        backprop_queries(model, &candidates, &dquery, sink);
        return Ok(loss);
    }

    let evidence = build_observed_set(observed, example.positive, ObservedMode::Train, config.pattern_dropout, rng);
    let mut key_enc = Vec::with_capacity(evidence.len());
    let mut keys = Vec::with_capacity(evidence.len());
    for &c in &evidence {
        let (v, e) = encoders[roles.key].encode(tables, c, tokens)?;
        keys.push(v);
        key_enc.push(e);
    }
    let mut out_enc = Vec::new();
    let outputs = if roles.is_tied() {
        keys.clone()
    } else {
        let mut outputs = Vec::with_capacity(evidence.len());
        for &c in &evidence {
            let (v, e) = encoders[roles.output].encode(tables, c, tokens)?;
            outputs.push(v);
            out_enc.push(e);
        }
        outputs
    };
    let obs = ObservedSet::new(evidence, keys, outputs);

    let per_query = kind.is_query_dependent();
    let aggs: Vec<_> = if per_query {
        candidates.iter().map(|c| aggregate(kind, &obs, &c.query, d)).collect()
    } else {
        vec![aggregate(kind, &obs, &[], d)]
    };
    let scores: Vec<f64> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| dot_unchecked(&aggs[if per_query { i } else { 0 }].vector, &c.query))
        .collect();
    let (loss, dscores) = objective(config.objective, &scores, &candidates)?;

    let n = obs.len();
    let mut dkeys = vec![vec![0.0; d]; n];
    let mut douts = vec![vec![0.0; d]; n];
    let mut dv_shared = vec![0.0; d];
    for (i, c) in candidates.iter().enumerate() {
        let agg = &aggs[if per_query { i } else { 0 }];
        let dv: Vec<f64> = c.query.iter().map(|q| dscores[i] * q).collect();
        for (dq, a) in dquery[i].iter_mut().zip(&agg.vector) {
            *dq += dscores[i] * a;
        }
        if per_query {
            let g = aggregate_backward(&obs, &c.query, agg, &dv);
            for (dq, gq) in dquery[i].iter_mut().zip(&g.query) {
                *dq += gq;
            }
            accumulate(&mut dkeys, &g.keys);
            accumulate(&mut douts, &g.outputs);
        } else {
            for k in 0..d {
                dv_shared[k] += dv[k];
            }
        }
    }
    if !per_query {
        let g = aggregate_backward(&obs, &[], &aggs[0], &dv_shared);
        accumulate(&mut douts, &g.outputs);
    }

    backprop_queries(model, &candidates, &dquery, sink);
    if roles.is_tied() {
        accumulate(&mut dkeys, &douts);
    } else {
        for (e, g) in out_enc.iter().zip(&douts) {
            encoders[roles.output].backward(tables, e, g, sink);
        }
    }
    for (e, g) in key_enc.iter().zip(&dkeys) {
        if g.iter().any(|x| *x != 0.0) {
            encoders[roles.key].backward(tables, e, g, sink);
        }
    }
    Ok(loss)
}

fn accumulate(into: &mut [Vec<f64>], from: &[Vec<f64>]) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn backprop_queries(model: &Model, candidates: &[Candidate], dquery: &[Vec<f64>], sink: &mut GradSink) {
    let encoder = &model.encoders()[model.roles().query];
    for (c, g) in candidates.iter().zip(dquery) {
        encoder.backward(model.tables(), &c.encoded, g, sink);
    }
}

/// Applies the objective to candidate scores (positive first) and returns
/// the loss with per-candidate score gradients, multiplicity included.
fn objective(objective: Objective, scores: &[f64], candidates: &[Candidate]) -> Result<(f64, Vec<f64>)> {
    let (loss, grads) = match objective {
        Objective::Nll => {
            let l = nll_loss(scores[0], &[]);
            let mut loss = l.loss;
            let mut grads = vec![l.dpos];
            for (s, c) in scores[1..].iter().zip(&candidates[1..]) {
                loss -= c.count * log_sigmoid(-s);
                grads.push(c.count * sigmoid(*s));
            }
            (loss, grads)
        }
        Objective::Bpr => {
            if candidates.len() != 2 || candidates[1].count != 1.0 {
                return Err(Error::Config("BPR takes exactly one negative".into()));
            }
            let l = bpr_loss(scores[0], scores[1]);
            (l.loss, vec![l.dpos, l.dneg[0]])
        }
    };
    if !loss.is_finite() {
        let cols: Vec<String> = candidates.iter().map(|c| c.column.to_string()).collect();
        return Err(Error::Divergence(format!("non-finite loss over columns [{}]", cols.join(", "))));
    }
    Ok((loss, grads))
}

/// Loss of one example without gradients (same rng consumption as
/// [`example_loss`]).
pub fn example_loss_value<R: Rng + ?Sized>(
    model: &Model,
    observed: &[ColumnId],
    example: &TrainingExample,
    config: &LossConfig,
    rng: &mut R,
) -> Result<f64> {
    example_loss(model, observed, example, config, rng, &mut GradSink::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::AggregatorKind;
    use crate::data::{Source, Vocabulary};
    use crate::model::{init_model, Init, ModelConfig};
    use crate::seeded_rng;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn nll_examples() {
        assert!((nll_loss(0.0, &[]).loss - LN2).abs() < 1e-15);
        assert!(nll_loss(50.0, &[-50.0, -60.0]).loss < 1e-20);
        let l = nll_loss(1.0, &[-1.0, 0.0]);
        assert!((l.loss - 1.3197).abs() < 1e-4, "{}", l.loss);
        let oracle = -(1.0f64 / (1.0 + (-1.0f64).exp())).ln() * 2.0 + LN2;
        assert!((l.loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn bpr_examples() {
        assert!((bpr_loss(0.3, 0.3).loss - LN2).abs() < 1e-15);
        assert!((bpr_loss(1.5, 0.5).loss - 0.3133).abs() < 1e-4);
        for (p, n) in [(-3.0, 2.0), (0.0, 0.0), (10.0, -10.0)] {
            assert!(bpr_loss(p, n).dpos < 0.0);
        }
    }

    proptest! {
        #[test]
        fn nll_is_non_negative(pos in -30.0f64..30.0, negs in prop::collection::vec(-30.0f64..30.0, 0..6)) {
            let l = nll_loss(pos, &negs);
            prop_assert!(l.loss >= 0.0);
            let h = 1e-6;
            let fd = (nll_loss(pos + h, &negs).loss - nll_loss(pos - h, &negs).loss) / (2.0 * h);
            prop_assert!((fd - l.dpos).abs() < 1e-5);
        }
    }

    fn observed(cols: &[u32]) -> Vec<ColumnId> {
        cols.iter().map(|&c| ColumnId(c)).collect()
    }

    #[test]
    fn negatives_avoid_observed_columns() {
        let obs = observed(&[1, 4, 7]);
        let mut rng = seeded_rng(1, 0, 0);
        for _ in 0..200 {
            let negs = sample_negatives(&obs, 10, 2, &mut rng).unwrap();
            assert_eq!(negs.len(), 2);
            assert_ne!(negs[0], negs[1]);
            assert!(negs.iter().all(|c| !obs.contains(c)));
        }
        let a = sample_negatives(&obs, 10, 5, &mut seeded_rng(9, 0, 0)).unwrap();
        let b = sample_negatives(&obs, 10, 5, &mut seeded_rng(9, 0, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_pool_samples_with_replacement() {
        let obs = observed(&(0..150).collect::<Vec<_>>());
        let negs = sample_negatives(&obs, 200, 200, &mut seeded_rng(2, 0, 0)).unwrap();
        assert_eq!(negs.len(), 200);
        assert!(negs.iter().all(|c| (150..200).contains(&c.0)));
        let all = observed(&[0, 1, 2]);
        assert!(matches!(sample_negatives(&all, 3, 1, &mut seeded_rng(0, 0, 0)), Err(Error::DegenerateRow(_))));
    }

    fn vocab(n_rows: usize, n_cols: usize) -> Vocabulary {
        let mut v = Vocabulary::new();
        for r in 0..n_rows {
            v.add_row(&format!("e{r}"));
        }
        for c in 0..n_cols {
            v.add_column(&format!("/c{c}"), Source::Kb).unwrap();
        }
        v
    }

    #[test]
    fn explicit_row_hand_computed() {
        let v = vocab(1, 3);
        let cfg = ModelConfig::new(2, AggregatorKind::ExplicitRow);
        let mut m = Model::new(cfg, &v, vec![true], Init::Zeros).unwrap();
        m.tables_mut()[0].row_mut(0).copy_from_slice(&[1.0, 0.5]);
        m.tables_mut()[0].row_mut(2).copy_from_slice(&[-1.0, 2.0]);
        let rows = m.row_table().unwrap();
        m.tables_mut()[rows].row_mut(0).copy_from_slice(&[2.0, -1.0]);
        let ex = TrainingExample {
            row: RowId(0),
            positive: ColumnId(0),
            negatives: vec![ColumnId(2)],
        };
        let lc = LossConfig {
            negatives: 1,
            ..LossConfig::default()
        };
        let mut sink = GradSink::new();
        let loss = example_loss(&m, &[ColumnId(0)], &ex, &lc, &mut seeded_rng(0, 0, 0), &mut sink).unwrap();
        // pos = 2*1 - 1*0.5 = 1.5, neg = -2 - 2 = -4
        let expect = (1.0 + (-1.5f64).exp()).ln() + (1.0 + (-4.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-12);
        let dpos = -1.0 / (1.0 + 1.5f64.exp());
        let dneg = 1.0 / (1.0 + 4.0f64.exp());
        let drow = sink.get(rows, 0).unwrap();
        assert!((drow[0] - (dpos - dneg)).abs() < 1e-12);
        assert!((drow[1] - (dpos * 0.5 + dneg * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_model_loss_is_analytic() {
        let v = vocab(2, 30);
        for kind in AggregatorKind::ALL {
            let cfg = ModelConfig::new(4, kind);
            let m = Model::new(cfg, &v, vec![true, true], Init::Zeros).unwrap();
            let lc = LossConfig {
                negatives: 7,
                ..LossConfig::default()
            };
            let obs = observed(&[0, 3, 5]);
            let ex = TrainingExample {
                row: RowId(1),
                positive: ColumnId(3),
                negatives: sample_negatives(&obs, 30, 7, &mut seeded_rng(4, 0, 0)).unwrap(),
            };
            let loss = example_loss_value(&m, &obs, &ex, &lc, &mut seeded_rng(0, 0, 0)).unwrap();
            assert!((loss - 8.0 * LN2).abs() < 1e-12, "{kind}: {loss}");
        }
    }

    #[test]
    fn duplicate_negatives_count_twice() {
        let v = vocab(1, 6);
        let m = init_model(&ModelConfig::new(3, AggregatorKind::MeanPool), &v, vec![], 3, None).unwrap();
        let obs = observed(&[0, 1]);
        let lc = LossConfig::default();
        let mk = |negs: &[u32]| TrainingExample {
            row: RowId(0),
            positive: ColumnId(0),
            negatives: observed(negs),
        };
        let one = example_loss_value(&m, &obs, &mk(&[4]), &lc, &mut seeded_rng(0, 0, 0)).unwrap();
        let pos_only = nll_loss(
            m.logit(RowId(0), &[ColumnId(1)], ColumnId(0)).unwrap(),
            &[],
        )
        .loss;
        let twice = example_loss_value(&m, &obs, &mk(&[4, 4]), &lc, &mut seeded_rng(0, 0, 0)).unwrap();
        assert!(((twice - pos_only) - 2.0 * (one - pos_only)).abs() < 1e-12);
    }

    #[test]
    fn bpr_needs_a_single_negative() {
        let v = vocab(1, 6);
        let m = init_model(&ModelConfig::new(3, AggregatorKind::MeanPool), &v, vec![], 3, None).unwrap();
        let lc = LossConfig {
            objective: Objective::Bpr,
            ..LossConfig::default()
        };
        assert_eq!(lc.negatives_per_example(), 1);
        let ex = TrainingExample {
            row: RowId(0),
            positive: ColumnId(0),
            negatives: observed(&[2, 3]),
        };
        let err = example_loss_value(&m, &observed(&[0, 1]), &ex, &lc, &mut seeded_rng(0, 0, 0));
        assert!(err.is_err());
    }
}
