//! Column encoders: embedding lookup, or a single-layer LSTM over the
//! tokens of a textual pattern.
//!
//! Encoders do not own parameters. They hold indices into the model's table
//! list, so that two roles pointing at the same encoder share parameters.

use crate::data::ColumnId;
use crate::math::{sigmoid, GradSink};
use crate::table::EmbeddingTable;
use crate::{par, Error, Result};

/// Gate order inside the stacked LSTM weight matrix.
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_O: usize = 2;
const GATE_G: usize = 3;

/// Single-layer LSTM. The weight table is `4h x (x + h + 1)`: rows are the
/// input, forget, output and candidate gates stacked in that order, columns
/// are `[token embedding; previous hidden; bias]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmEncoder {
    pub tokens: usize,
    pub weights: usize,
    /// Optional `d x h` projection from the hidden state to the output.
    pub projection: Option<usize>,
    pub token_dim: usize,
    pub hidden: usize,
}

/// Everything one cell step needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStep {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Runs one LSTM cell step.
pub fn lstm_cell_step(weights: &EmbeddingTable, input: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellStep {
    let h = h_prev.len();
    let x = input.len();
    debug_assert_eq!(weights.rows(), 4 * h);
    debug_assert_eq!(weights.cols(), x + h + 1);
    let pre = |gate: usize, k: usize| -> f64 {
        let w = weights.row(gate * h + k);
        let mut z = w[x + h];
        for (a, b) in w[..x].iter().zip(input) {
            z += a * b;
        }
        for (a, b) in w[x..x + h].iter().zip(h_prev) {
            z += a * b;
        }
        z
    };
    let i: Vec<f64> = (0..h).map(|k| sigmoid(pre(GATE_I, k))).collect();
    let f: Vec<f64> = (0..h).map(|k| sigmoid(pre(GATE_F, k))).collect();
    let o: Vec<f64> = (0..h).map(|k| sigmoid(pre(GATE_O, k))).collect();
    let g: Vec<f64> = (0..h).map(|k| pre(GATE_G, k).tanh()).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let hn: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    CellStep {
        input: input.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h: hn,
    }
}

/// Forward trace of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    tokens: Vec<u32>,
    steps: Vec<CellStep>,
}

impl LstmTrace {
    pub fn final_hidden(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence").h
    }
}

impl LstmEncoder {
    pub fn forward(&self, tables: &[EmbeddingTable], tokens: &[u32]) -> (Vec<f64>, LstmTrace) {
        let weights = &tables[self.weights];
        let emb = &tables[self.tokens];
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let step = lstm_cell_step(weights, emb.row(tok as usize), &h, &c);
            h.clone_from(&step.h);
            c.clone_from(&step.c);
            steps.push(step);
        }
        let out = match self.projection {
            Some(p) => {
                let proj = &tables[p];
                (0..proj.rows())
                    .map(|a| proj.row(a).iter().zip(&h).map(|(w, v)| w * v).sum())
                    .collect()
            }
            None => h,
        };
        (
            out,
            LstmTrace {
                tokens: tokens.to_vec(),
                steps,
            },
        )
    }

    /// Backpropagates `dout` (gradient w.r.t. the encoder output) through
    /// time into the token, weight and projection tables.
    pub fn backward(&self, tables: &[EmbeddingTable], trace: &LstmTrace, dout: &[f64], sink: &mut GradSink) {
        let weights = &tables[self.weights];
        let h = self.hidden;
        let x = self.token_dim;
        let mut dh = match self.projection {
            Some(p) => {
                let proj = &tables[p];
                let hidden = trace.final_hidden();
                let mut dh = vec![0.0; h];
                for (a, &da) in dout.iter().enumerate() {
                    if da == 0.0 {
                        continue;
                    }
                    sink.add_scaled(p, a, hidden, da);
                    for (k, w) in proj.row(a).iter().enumerate() {
                        dh[k] += da * w;
                    }
                }
                dh
            }
            None => dout.to_vec(),
        };
        let mut dc = vec![0.0; h];
        let mut dw_rows = vec![vec![0.0; x + h + 1]; 4 * h];
        for (t, step) in trace.steps.iter().enumerate().rev() {
            let mut dz = vec![0.0; 4 * h];
            for k in 0..h {
                let d_o = dh[k] * step.tanh_c[k];
                dc[k] += dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
                let d_i = dc[k] * step.g[k];
                let d_g = dc[k] * step.i[k];
                let d_f = dc[k] * step.c_prev[k];
                dz[GATE_I * h + k] = d_i * step.i[k] * (1.0 - step.i[k]);
                dz[GATE_F * h + k] = d_f * step.f[k] * (1.0 - step.f[k]);
                dz[GATE_O * h + k] = d_o * step.o[k] * (1.0 - step.o[k]);
                dz[GATE_G * h + k] = d_g * (1.0 - step.g[k] * step.g[k]);
                dc[k] *= step.f[k];
            }
            let mut dx = vec![0.0; x];
            let mut dh_prev = vec![0.0; h];
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                let w = weights.row(r);
                let acc = &mut dw_rows[r];
                for j in 0..x {
                    acc[j] += dzr * step.input[j];
                    dx[j] += dzr * w[j];
                }
                for j in 0..h {
                    acc[x + j] += dzr * step.h_prev[j];
                    dh_prev[j] += dzr * w[x + j];
                }
                acc[x + h] += dzr;
            }
            sink.add(self.tokens, trace.tokens[t] as usize, &dx);
            dh = dh_prev;
        }
        for (r, g) in dw_rows.iter().enumerate() {
            sink.add(self.weights, r, g);
        }
    }
}

/// How a single column was encoded, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    Lookup { slot: usize },
    Lstm(LstmTrace),
}

/// Produces column vectors by lookup, or by LSTM for columns that carry a
/// token sequence when an LSTM is attached. KB columns always use lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnEncoder {
    pub lookup: usize,
    /// Column id -> lookup row; `None` marks LSTM-encoded columns.
    slots: Vec<Option<u32>>,
    pub lstm: Option<LstmEncoder>,
}

impl ColumnEncoder {
    /// Plain lookup over `n_columns` columns.
    pub fn lookup(table: usize, n_columns: usize) -> Self {
        Self {
            lookup: table,
            slots: (0..n_columns as u32).map(Some).collect(),
            lstm: None,
        }
    }

    /// Lookup for columns without tokens, LSTM for the rest. The lookup
    /// table must have one row per column without tokens, in id order.
    pub fn hybrid(table: usize, column_tokens: &[Option<Vec<u32>>], lstm: LstmEncoder) -> Self {
        let mut next = 0u32;
        let slots = column_tokens
            .iter()
            .map(|t| match t {
                Some(_) => None,
                None => {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        Self {
            lookup: table,
            slots,
            lstm: Some(lstm),
        }
    }

    /// Number of lookup rows this encoder needs.
    pub fn lookup_rows(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn n_columns(&self) -> usize {
        self.slots.len()
    }

    pub fn lookup_slot(&self, col: ColumnId) -> Option<usize> {
        self.slots.get(col.index()).copied().flatten().map(|s| s as usize)
    }

    pub fn encode(
        &self,
        tables: &[EmbeddingTable],
        col: ColumnId,
        column_tokens: &[Option<Vec<u32>>],
    ) -> Result<(Vec<f64>, Encoded)> {
        let slot = self
            .slots
            .get(col.index())
            .ok_or_else(|| Error::Encoding(col.to_string(), "column id out of range".into()))?;
        match (slot, &self.lstm) {
            (Some(s), _) => {
                let s = *s as usize;
                Ok((tables[self.lookup].row(s).to_vec(), Encoded::Lookup { slot: s }))
            }
            (None, Some(lstm)) => {
                let tokens = column_tokens
                    .get(col.index())
                    .and_then(|t| t.as_deref())
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| Error::Encoding(col.to_string(), "text column has no token sequence".into()))?;
                let (v, trace) = lstm.forward(tables, tokens);
                Ok((v, Encoded::Lstm(trace)))
            }
            (None, None) => Err(Error::Encoding(col.to_string(), "no encoder for column".into())),
        }
    }

    pub fn encode_column(
        &self,
        tables: &[EmbeddingTable],
        col: ColumnId,
        column_tokens: &[Option<Vec<u32>>],
    ) -> Result<Vec<f64>> {
        self.encode(tables, col, column_tokens).map(|(v, _)| v)
    }

    /// Encodes many columns; identical to calling [`Self::encode_column`] on each.
    pub fn encode_batch(
        &self,
        tables: &[EmbeddingTable],
        cols: &[ColumnId],
        column_tokens: &[Option<Vec<u32>>],
    ) -> Result<Vec<Vec<f64>>> {
        par::map(cols, |&c| self.encode_column(tables, c, column_tokens))
            .into_iter()
            .collect()
    }

    pub fn backward(&self, tables: &[EmbeddingTable], encoded: &Encoded, dout: &[f64], sink: &mut GradSink) {
        match encoded {
            Encoded::Lookup { slot } => sink.add(self.lookup, *slot, dout),
            Encoded::Lstm(trace) => self
                .lstm
                .as_ref()
                .expect("LSTM trace without LSTM encoder")
                .backward(tables, trace, dout, sink),
        }
    }
}

/// Which encoder plays each part in scoring and attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderRoles {
    /// Encodes the query column.
    pub query: usize,
    /// Encodes observed columns when scoring them against the query.
    pub key: usize,
    /// Encodes observed columns when building the row vector.
    pub output: usize,
}

impl EncoderRoles {
    pub fn shared(encoder: usize) -> Self {
        Self {
            query: encoder,
            key: encoder,
            output: encoder,
        }
    }

    pub fn is_tied(&self) -> bool {
        self.key == self.output
    }
}
