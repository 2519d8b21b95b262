//! Row representations built from the columns observed with a row.
//!
//! Every aggregator sees an [`ObservedSet`]: the observed column ids in
//! ascending order, their key vectors (scored against the query) and their
//! output vectors (combined into the row vector). With tied roles the two
//! coincide.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ColumnId;
use crate::math::{dot_unchecked, softmax};
use crate::Error;

/// How a row vector is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    /// A learned embedding per row; the classic matrix-factorization model.
    #[serde(rename = "explicit")]
    ExplicitRow,
    #[serde(rename = "mean")]
    MeanPool,
    MaxPool,
    MaxRelation,
    Attention,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 5] = [
        AggregatorKind::ExplicitRow,
        AggregatorKind::MeanPool,
        AggregatorKind::MaxPool,
        AggregatorKind::MaxRelation,
        AggregatorKind::Attention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::ExplicitRow => "explicit",
            AggregatorKind::MeanPool => "mean",
            AggregatorKind::MaxPool => "max-pool",
            AggregatorKind::MaxRelation => "max-relation",
            AggregatorKind::Attention => "attention",
        }
    }

    pub fn is_row_less(self) -> bool {
        self != AggregatorKind::ExplicitRow
    }

    /// Whether the row vector depends on the query column.
    pub fn is_query_dependent(self) -> bool {
        matches!(self, AggregatorKind::MaxRelation | AggregatorKind::Attention)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        AggregatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregator {s:?}")))
    }
}

/// Whether an observed set is built for training (with pattern dropout) or
/// evaluation (all evidence).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservedMode {
    Train,
    Eval,
}

/// Selects the evidence columns for scoring `query` against a row: the row's
/// observed columns minus the query itself, capped at `max_train` uniformly
/// sampled entries in training mode. Output stays in ascending id order.
pub fn build_observed_set<R: Rng + ?Sized>(
    observed: &[ColumnId],
    query: ColumnId,
    mode: ObservedMode,
    max_train: usize,
    rng: &mut R,
) -> Vec<ColumnId> {
    let mut cols: Vec<ColumnId> = observed.iter().copied().filter(|&c| c != query).collect();
    if mode == ObservedMode::Train && cols.len() > max_train {
        let mut keep = index::sample(rng, cols.len(), max_train).into_vec();
        keep.sort_unstable();
        cols = keep.into_iter().map(|i| cols[i]).collect();
    }
    cols
}

/// Encoded evidence for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSet {
    pub columns: Vec<ColumnId>,
    pub keys: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl ObservedSet {
    pub fn new(columns: Vec<ColumnId>, keys: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> Self {
        assert_eq!(columns.len(), keys.len());
        assert_eq!(columns.len(), outputs.len());
        Self {
            columns,
            keys,
            outputs,
        }
    }

    /// Keys and outputs from the same encoder.
    pub fn tied(columns: Vec<ColumnId>, vectors: Vec<Vec<f64>>) -> Self {
        Self::new(columns, vectors.clone(), vectors)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Provenance of a query-dependent row vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub columns: Vec<ColumnId>,
    /// One weight per observed column; one-hot for max relation.
    pub weights: Vec<f64>,
    pub chosen_max: ColumnId,
}

impl AttentionTrace {
    /// `(column, weight)` pairs by descending weight, ties by ascending id.
    pub fn ranked(&self) -> Vec<(ColumnId, f64)> {
        let mut out: Vec<(ColumnId, f64)> = self.columns.iter().copied().zip(self.weights.iter().copied()).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Forward result with what the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub vector: Vec<f64>,
    pub detail: Detail,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    /// No evidence: the zero vector.
    Empty,
    Mean,
    /// Index of the winning observed entry for each dimension.
    MaxPool { argmax: Vec<usize> },
    MaxRelation { chosen: usize },
    Attention { weights: Vec<f64> },
}

impl Aggregation {
    /// Attention/max-relation provenance, when there is any.
    pub fn trace(&self, obs: &ObservedSet) -> Option<AttentionTrace> {
        match &self.detail {
            Detail::MaxRelation { chosen } => {
                let mut weights = vec![0.0; obs.len()];
                weights[*chosen] = 1.0;
                Some(AttentionTrace {
                    columns: obs.columns.clone(),
                    weights,
                    chosen_max: obs.columns[*chosen],
                })
            }
            Detail::Attention { weights } => {
                let best = best_index(&obs.columns, weights);
                Some(AttentionTrace {
                    columns: obs.columns.clone(),
                    weights: weights.clone(),
                    chosen_max: obs.columns[best],
                })
            }
            _ => None,
        }
    }
}

/// Gradients w.r.t. the aggregator inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationGrad {
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// Index of the largest value; ties go to the lowest column id.
fn best_index(columns: &[ColumnId], values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        let better = values[i] > values[best] || (values[i] == values[best] && columns[i] < columns[best]);
        if better {
            best = i;
        }
    }
    best
}

pub fn aggregate_mean(obs: &ObservedSet) -> Option<Vec<f64>> {
    let first = obs.outputs.first()?;
    let mut v = vec![0.0; first.len()];
    for o in &obs.outputs {
        for (a, b) in v.iter_mut().zip(o) {
            *a += b;
        }
    }
    let n = obs.len() as f64;
    v.iter_mut().for_each(|a| *a /= n);
    Some(v)
}

fn max_pool_with_argmax(obs: &ObservedSet) -> Option<(Vec<f64>, Vec<usize>)> {
    let d = obs.outputs.first()?.len();
    let mut argmax = vec![0usize; d];
    for (k, slot) in argmax.iter_mut().enumerate() {
        let column: Vec<f64> = obs.outputs.iter().map(|o| o[k]).collect();
        *slot = best_index(&obs.columns, &column);
    }
    let v = argmax.iter().enumerate().map(|(k, &i)| obs.outputs[i][k]).collect();
    Some((v, argmax))
}

pub fn aggregate_max_pool(obs: &ObservedSet) -> Option<Vec<f64>> {
    max_pool_with_argmax(obs).map(|(v, _)| v)
}

pub fn aggregate_max_relation(obs: &ObservedSet, query: &[f64]) -> Option<(Vec<f64>, AttentionTrace)> {
    let agg = aggregate(AggregatorKind::MaxRelation, obs, query, query.len());
    let trace = agg.trace(obs)?;
    Some((agg.vector, trace))
}

pub fn aggregate_attention(obs: &ObservedSet, query: &[f64]) -> Option<(Vec<f64>, AttentionTrace)> {
    let agg = aggregate(AggregatorKind::Attention, obs, query, query.len());
    let trace = agg.trace(obs)?;
    Some((agg.vector, trace))
}

/// Runs a row-less aggregator. An empty set yields the zero vector of
/// length `dim`. `ExplicitRow` is not an aggregator and panics here.
pub fn aggregate(kind: AggregatorKind, obs: &ObservedSet, query: &[f64], dim: usize) -> Aggregation {
    if obs.is_empty() {
        return Aggregation {
            vector: vec![0.0; dim],
            detail: Detail::Empty,
        };
    }
    match kind {
        AggregatorKind::ExplicitRow => panic!("explicit rows are looked up, not aggregated"),
        AggregatorKind::MeanPool => Aggregation {
            vector: aggregate_mean(obs).expect("non-empty"),
            detail: Detail::Mean,
        },
        AggregatorKind::MaxPool => {
            let (vector, argmax) = max_pool_with_argmax(obs).expect("non-empty");
            Aggregation {
                vector,
                detail: Detail::MaxPool { argmax },
            }
        }
        AggregatorKind::MaxRelation => {
            let scores: Vec<f64> = obs.keys.iter().map(|k| dot_unchecked(k, query)).collect();
            let chosen = best_index(&obs.columns, &scores);
            Aggregation {
                vector: obs.outputs[chosen].clone(),
                detail: Detail::MaxRelation { chosen },
            }
        }
        AggregatorKind::Attention => {
            let scores: Vec<f64> = obs.keys.iter().map(|k| dot_unchecked(k, query)).collect();
            let weights = softmax(&scores);
            let mut vector = vec![0.0; dim];
            for (p, o) in weights.iter().zip(&obs.outputs) {
                for (a, b) in vector.iter_mut().zip(o) {
                    *a += p * b;
                }
            }
            Aggregation {
                vector,
                detail: Detail::Attention { weights },
            }
        }
    }
}

/// Backpropagates `grad` (d loss / d row vector) through an aggregation.
/// Max pool and max relation pass gradient only to the selected entries.
pub fn aggregate_backward(obs: &ObservedSet, query: &[f64], agg: &Aggregation, grad: &[f64]) -> AggregationGrad {
    let d = grad.len();
    let n = obs.len();
    let mut out = AggregationGrad {
        query: vec![0.0; d],
        keys: vec![vec![0.0; d]; n],
        outputs: vec![vec![0.0; d]; n],
    };
    match &agg.detail {
        Detail::Empty => {}
        Detail::Mean => {
            let inv = 1.0 / n as f64;
            for o in &mut out.outputs {
                for (a, g) in o.iter_mut().zip(grad) {
                    *a = g * inv;
                }
            }
        }
        Detail::MaxPool { argmax } => {
            for (k, &i) in argmax.iter().enumerate() {
                out.outputs[i][k] += grad[k];
            }
        }
        Detail::MaxRelation { chosen } => {
            out.outputs[*chosen].copy_from_slice(grad);
        }
        Detail::Attention { weights } => {
            // d loss / d weight_i = grad . output_i, then through the softmax
            let gw: Vec<f64> = obs.outputs.iter().map(|o| dot_unchecked(grad, o)).collect();
            let mean: f64 = weights.iter().zip(&gw).map(|(p, g)| p * g).sum();
            for i in 0..n {
                let ds = weights[i] * (gw[i] - mean);
                for k in 0..d {
                    out.outputs[i][k] = weights[i] * grad[k];
                    out.keys[i][k] = ds * query[k];
                    out.query[k] += ds * obs.keys[i][k];
                }
            }
        }
    }
    out
}
