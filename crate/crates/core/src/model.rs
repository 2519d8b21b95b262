//! Parameter layout and scoring.
//!
//! A model owns a flat list of [`EmbeddingTable`]s. Column encoders and the
//! optional explicit row table refer to tables by index, and the three
//! encoder roles (query, key, output) refer to encoders by index.
//!
//! Layouts:
//!
//! | aggregator            | tied | separate query | encoders            |
//! |-----------------------|------|----------------|---------------------|
//! | any                   | yes  | no             | `columns`           |
//! | attention (default)   | yes  | yes            | `columns`, `query`  |
//! | attention/max-rel     | no   | no             | `columns`, `output` |
//! | attention/max-rel     | no   | yes            | all three           |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorKind, AttentionTrace, ObservedSet};
use crate::data::{ColumnId, RowId, Vocabulary};
use crate::encoder::{ColumnEncoder, EncoderRoles, LstmEncoder};
use crate::math::{dot_unchecked, sigmoid, AdamConfig, GradSink};
use crate::table::EmbeddingTable;
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lookup,
    /// LSTM over pattern tokens for TEXT columns, lookup for KB columns.
    Lstm,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Lookup => "lookup",
            EncoderKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lookup" => Ok(EncoderKind::Lookup),
            "lstm" => Ok(EncoderKind::Lstm),
            _ => Err(Error::Config(format!("unknown encoder {s:?}"))),
        }
    }
}

/// Architecture of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub aggregator: AggregatorKind,
    pub encoder: EncoderKind,
    pub token_dim: usize,
    /// LSTM hidden size; when it differs from `dim` a projection is added.
    pub lstm_hidden: Option<usize>,
    /// Key and output encoders are the same object.
    pub attention_tied: bool,
    /// Query columns get their own encoder. Defaults to on for tied
    /// attention and off otherwise.
    pub separate_query: Option<bool>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 25,
            aggregator: AggregatorKind::Attention,
            encoder: EncoderKind::Lookup,
            token_dim: 100,
            lstm_hidden: None,
            attention_tied: true,
            separate_query: None,
        }
    }
}

impl ModelConfig {
    pub fn new(dim: usize, aggregator: AggregatorKind) -> Self {
        Self {
            dim,
            aggregator,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.token_dim == 0 || self.lstm_hidden == Some(0) {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        Ok(())
    }

    fn untied(&self) -> bool {
        !self.attention_tied && self.aggregator.is_query_dependent()
    }

    pub fn uses_separate_query(&self) -> bool {
        self.separate_query
            .unwrap_or(self.aggregator == AggregatorKind::Attention && !self.untied())
    }

    pub fn hidden(&self) -> usize {
        self.lstm_hidden.unwrap_or(self.dim)
    }
}

/// How fresh tables are filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Embeddings uniform in `±0.1/sqrt(width)`, LSTM weights in `±1/sqrt(hidden)`.
    Uniform { seed: u64 },
}

/// Parameter count of one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSummary {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub aggregator: AggregatorKind,
    pub encoder: EncoderKind,
    pub tables: Vec<TableSummary>,
    pub row_params: usize,
    pub total: usize,
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "aggregator\t{}", self.aggregator)?;
        writeln!(f, "encoder\t{}", self.encoder)?;
        for t in &self.tables {
            writeln!(f, "table\t{}\t{}x{}\t{}", t.name, t.rows, t.cols, t.params)?;
        }
        writeln!(f, "row_params\t{}", self.row_params)?;
        write!(f, "total\t{}", self.total)
    }
}

/// A row-less (or explicit-row) universal schema model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    n_rows: usize,
    n_columns: usize,
    n_tokens: usize,
    pub(crate) tables: Vec<EmbeddingTable>,
    pub(crate) encoders: Vec<ColumnEncoder>,
    pub(crate) roles: EncoderRoles,
    row_table: Option<usize>,
    trained_rows: Vec<bool>,
    column_tokens: Arc<Vec<Option<Vec<u32>>>>,
}

struct TableSpec {
    name: String,
    rows: usize,
    cols: usize,
    scale: f64,
}

impl Model {
    /// Builds a model for `vocab`. `trained_rows` marks rows that will have a
    /// learned embedding under `ExplicitRow`; it is ignored otherwise.
    pub fn new(config: ModelConfig, vocab: &Vocabulary, trained_rows: Vec<bool>, init: Init) -> Result<Self> {
        let column_tokens = Arc::new(vocab.all_column_tokens().to_vec());
        Self::build(config, vocab.n_rows(), vocab.n_tokens(), column_tokens, trained_rows, |specs| {
            specs
                .iter()
                .enumerate()
                .map(|(i, s)| match init {
                    Init::Zeros => EmbeddingTable::zeros(&s.name, s.rows, s.cols),
                    Init::Uniform { seed } => {
                        let mut rng = seeded_rng(seed, 0x1417, i as u64);
                        EmbeddingTable::uniform(&s.name, s.rows, s.cols, s.scale, &mut rng)
                    }
                })
                .collect()
        })
    }

    /// Rebuilds a model around already-loaded tables (checkpoint loading).
    pub fn from_tables(
        config: ModelConfig,
        vocab: &Vocabulary,
        trained_rows: Vec<bool>,
        tables: Vec<EmbeddingTable>,
    ) -> Result<Self> {
        let column_tokens = Arc::new(vocab.all_column_tokens().to_vec());
        let mut tables = Some(tables);
        let mut mismatch = None;
        let model = Self::build(config, vocab.n_rows(), vocab.n_tokens(), column_tokens, trained_rows, |specs| {
            let tables = tables.take().expect("called once");
            if tables.len() != specs.len() {
                mismatch = Some(format!("expected {} tables, found {}", specs.len(), tables.len()));
            } else if let Some((s, t)) = specs
                .iter()
                .zip(&tables)
                .find(|(s, t)| s.name != t.name() || s.rows != t.rows() || s.cols != t.cols())
            {
                mismatch = Some(format!(
                    "table {} should be {}x{}, found {} {}x{}",
                    s.name,
                    s.rows,
                    s.cols,
                    t.name(),
                    t.rows(),
                    t.cols()
                ));
            }
            tables
        });
        match mismatch {
            Some(m) => Err(Error::Checkpoint(m)),
            None => model,
        }
    }

    fn build<F>(
        config: ModelConfig,
        n_rows: usize,
        n_tokens: usize,
        column_tokens: Arc<Vec<Option<Vec<u32>>>>,
        trained_rows: Vec<bool>,
        make_tables: F,
    ) -> Result<Self>
    where
        F: FnOnce(&[TableSpec]) -> Vec<EmbeddingTable>,
    {
        config.validate()?;
        let n_columns = column_tokens.len();
        let d = config.dim;
        let emb_scale = |width: usize| 0.1 / (width as f64).sqrt();
        let mut specs: Vec<TableSpec> = Vec::new();
        let mut encoders = Vec::new();

        let mut add_encoder = |name: &str, specs: &mut Vec<TableSpec>| {
            let lookup = specs.len();
            match config.encoder {
                EncoderKind::Lookup => {
                    specs.push(TableSpec {
                        name: name.to_owned(),
                        rows: n_columns,
                        cols: d,
                        scale: emb_scale(d),
                    });
                    encoders.push(ColumnEncoder::lookup(lookup, n_columns));
                }
                EncoderKind::Lstm => {
                    let h = config.hidden();
                    let x = config.token_dim;
                    let kb_rows = column_tokens.iter().filter(|t| t.is_none()).count();
                    specs.push(TableSpec {
                        name: name.to_owned(),
                        rows: kb_rows,
                        cols: d,
                        scale: emb_scale(d),
                    });
                    let tokens = specs.len();
                    specs.push(TableSpec {
                        name: format!("{name}.tokens"),
                        rows: n_tokens,
                        cols: x,
                        scale: emb_scale(x),
                    });
                    let weights = specs.len();
                    specs.push(TableSpec {
                        name: format!("{name}.lstm"),
                        rows: 4 * h,
                        cols: x + h + 1,
                        scale: 1.0 / (h as f64).sqrt(),
                    });
                    let projection = (h != d).then(|| {
                        specs.push(TableSpec {
                            name: format!("{name}.projection"),
                            rows: d,
                            cols: h,
                            scale: 1.0 / (h as f64).sqrt(),
                        });
                        specs.len() - 1
                    });
                    let lstm = LstmEncoder {
                        tokens,
                        weights,
                        projection,
                        token_dim: x,
                        hidden: h,
                    };
                    encoders.push(ColumnEncoder::hybrid(lookup, &column_tokens, lstm));
                }
            }
            encoders.len() - 1
        };

        let base = add_encoder("columns", &mut specs);
        let mut roles = EncoderRoles::shared(base);
        if config.untied() {
            roles.output = add_encoder("output", &mut specs);
        }
        if config.uses_separate_query() {
            roles.query = add_encoder("query", &mut specs);
        }
        let row_table = (config.aggregator == AggregatorKind::ExplicitRow).then(|| {
            specs.push(TableSpec {
                name: "rows".into(),
                rows: n_rows,
                cols: d,
                scale: emb_scale(d),
            });
            specs.len() - 1
        });
        let trained_rows = if row_table.is_some() {
            if trained_rows.len() != n_rows {
                return Err(Error::Config(format!(
                    "trained-row mask has {} entries for {n_rows} rows",
                    trained_rows.len()
                )));
            }
            trained_rows
        } else {
            Vec::new()
        };

        let tables = make_tables(&specs);
        Ok(Self {
            config,
            n_rows,
            n_columns,
            n_tokens,
            tables,
            encoders,
            roles,
            row_table,
            trained_rows,
            column_tokens,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn aggregator(&self) -> AggregatorKind {
        self.config.aggregator
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn tables(&self) -> &[EmbeddingTable] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [EmbeddingTable] {
        &mut self.tables
    }

    pub fn roles(&self) -> EncoderRoles {
        self.roles
    }

    pub fn encoders(&self) -> &[ColumnEncoder] {
        &self.encoders
    }

    pub fn row_table(&self) -> Option<usize> {
        self.row_table
    }

    pub fn trained_rows(&self) -> &[bool] {
        &self.trained_rows
    }

    pub fn column_tokens(&self) -> &[Option<Vec<u32>>] {
        &self.column_tokens
    }

    /// Whether `row` has a learned embedding (always true for row-less models).
    pub fn has_row_embedding(&self, row: RowId) -> bool {
        self.row_table.is_none() || self.trained_rows.get(row.index()).copied().unwrap_or(false)
    }

    pub fn checksum(&self) -> u64 {
        self.tables
            .iter()
            .fold(0u64, |h, t| h.rotate_left(7) ^ t.checksum())
    }

    /// Encodes `col` with the encoder behind `encoder` (an index from [`Self::roles`]).
    pub fn encode(&self, encoder: usize, col: ColumnId) -> Result<Vec<f64>> {
        self.encoders[encoder].encode_column(&self.tables, col, &self.column_tokens)
    }

    pub fn encode_query(&self, col: ColumnId) -> Result<Vec<f64>> {
        self.encode(self.roles.query, col)
    }

    /// Encodes evidence columns with the key and output encoders.
    pub fn observed_set(&self, cols: &[ColumnId]) -> Result<ObservedSet> {
        let keys = cols
            .iter()
            .map(|&c| self.encode(self.roles.key, c))
            .collect::<Result<Vec<_>>>()?;
        let outputs = if self.roles.is_tied() {
            keys.clone()
        } else {
            cols.iter()
                .map(|&c| self.encode(self.roles.output, c))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(ObservedSet::new(cols.to_vec(), keys, outputs))
    }

    fn explicit_row(&self, table: usize, row: RowId) -> Result<Vec<f64>> {
        if !self.has_row_embedding(row) {
            return Err(Error::UnseenRow(row.to_string()));
        }
        Ok(self.tables[table].row(row.index()).to_vec())
    }

    /// The row vector for `row` given its evidence and the query column.
    /// `ExplicitRow` ignores the evidence and fails for rows it never trained.
    pub fn row_vector(
        &self,
        row: RowId,
        evidence: &[ColumnId],
        query: ColumnId,
    ) -> Result<(Vec<f64>, Option<AttentionTrace>)> {
        if let Some(t) = self.row_table {
            return Ok((self.explicit_row(t, row)?, None));
        }
        let q = self.encode_query(query)?;
        let obs = self.observed_set(evidence)?;
        let agg = aggregate(self.config.aggregator, &obs, &q, self.dim());
        let trace = agg.trace(&obs);
        Ok((agg.vector, trace))
    }

    /// Raw compatibility `v(row) . v(query)`.
    pub fn logit(&self, row: RowId, evidence: &[ColumnId], query: ColumnId) -> Result<f64> {
        let (v, _) = self.row_vector(row, evidence, query)?;
        let q = self.encode_query(query)?;
        Ok(dot_unchecked(&v, &q))
    }

    pub fn probability(&self, row: RowId, evidence: &[ColumnId], query: ColumnId) -> Result<f64> {
        self.logit(row, evidence, query).map(sigmoid)
    }

    /// Logit for evaluation: an explicit-row model scores rows it never
    /// trained with the zero vector instead of failing. The flag reports
    /// whether that cold-start path was taken.
    pub fn eval_logit(&self, row: RowId, evidence: &[ColumnId], query: ColumnId) -> Result<(f64, bool)> {
        if self.row_table.is_some() && !self.has_row_embedding(row) {
            return Ok((0.0, true));
        }
        self.logit(row, evidence, query).map(|s| (s, false))
    }

    /// Parameter counts per table.
    pub fn summary(&self) -> ModelSummary {
        let tables: Vec<TableSummary> = self
            .tables
            .iter()
            .map(|t| TableSummary {
                name: t.name().to_owned(),
                rows: t.rows(),
                cols: t.cols(),
                params: t.len(),
            })
            .collect();
        let row_params = self.row_table.map_or(0, |t| self.tables[t].len());
        ModelSummary {
            aggregator: self.config.aggregator,
            encoder: self.config.encoder,
            total: tables.iter().map(|t| t.params).sum(),
            tables,
            row_params,
        }
    }

    /// Copies the donor's column embeddings into this model's key and output
    /// encoders. The query encoder keeps its own initialization unless it
    /// shares an encoder with the keys.
    pub fn warm_start_from(&mut self, donor: &Model) -> Result<()> {
        let src = &donor.tables[donor.encoders[donor.roles.output].lookup];
        let mut targets = vec![self.encoders[self.roles.key].lookup];
        if !self.roles.is_tied() {
            targets.push(self.encoders[self.roles.output].lookup);
        }
        for t in targets {
            let dst = &mut self.tables[t];
            if dst.rows() != src.rows() || dst.cols() != src.cols() {
                return Err(Error::Checkpoint(format!(
                    "donor column table is {}x{}, expected {}x{}",
                    src.rows(),
                    src.cols(),
                    dst.rows(),
                    dst.cols()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Applies one Adam step to every row present in `sink`.
    pub fn apply_gradients(&mut self, sink: &GradSink, adam: &AdamConfig, l2: f64) -> Result<()> {
        for (table, row, grad) in sink.iter() {
            self.tables[table].apply_adam(row, grad, l2, adam)?;
        }
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.tables.iter_mut().for_each(EmbeddingTable::reset_optimizer);
    }

    /// Overwrites parameters with those of `other` (same layout).
    pub fn copy_parameters_from(&mut self, other: &Model) {
        for (a, b) in self.tables.iter_mut().zip(&other.tables) {
            a.data_mut().copy_from_slice(b.data());
        }
    }

    /// Random perturbation helper for tests and benchmarks.
    pub fn randomize<R: Rng>(&mut self, scale: f64, rng: &mut R) {
        for t in &mut self.tables {
            for x in t.data_mut() {
                *x = rng.gen_range(-scale..=scale);
            }
        }
    }
}

/// Builds a fresh model for training: uniform initialization under `seed`,
/// optionally warm-started from a donor's column embeddings.
pub fn init_model(
    config: &ModelConfig,
    vocab: &Vocabulary,
    trained_rows: Vec<bool>,
    seed: u64,
    donor: Option<&Model>,
) -> Result<Model> {
    let mut model = Model::new(config.clone(), vocab, trained_rows, Init::Uniform { seed })?;
    if let Some(donor) = donor {
        if donor.dim() != model.dim() {
            return Err(Error::Checkpoint(format!(
                "donor dimension {} does not match {}",
                donor.dim(),
                model.dim()
            )));
        }
        model.warm_start_from(donor)?;
    }
    Ok(model)
}
