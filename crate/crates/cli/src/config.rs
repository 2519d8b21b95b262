//! Run configuration: a flat TOML document whose keys can each be overridden
//! by a command-line flag of the same name (underscores become hyphens).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use uschema::aggregation::AggregatorKind;
use uschema::data::{FilterConfig, SplitRatios, UnseenCount};
use uschema::evaluation::{EvalMode, EvalProtocol};
use uschema::loss::{LossConfig, Objective};
use uschema::math::AdamConfig;
use uschema::model::{EncoderKind, ModelConfig};
use uschema::training::TrainConfig;
use uschema::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Rows are entity pairs, columns relations; validated by MRR.
    Relation,
    /// Rows are entities, columns types; validated by MAP.
    Type,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub init_from: Option<PathBuf>,
    pub task: Task,

    /// 0 disables the pattern-length filter.
    pub max_pattern_len: usize,
    pub min_row_degree: usize,

    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    pub eval_unseen: bool,
    pub unseen_fraction: f64,

    pub dim: usize,
    pub aggregator: AggregatorKind,
    pub encoder: EncoderKind,
    pub token_dim: usize,
    /// 0 means "same as dim".
    pub lstm_hidden: usize,
    pub attention_tied: bool,
    pub separate_query: Option<bool>,

    pub objective: Objective,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub l2: f64,
    pub negatives: usize,
    pub pattern_dropout: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,

    /// Negatives per positive at evaluation; 0 uses the protocol default
    /// (100 for type, every eligible row for relation).
    pub eval_negatives: usize,
    pub hits_k: usize,
    pub filter_text_rows: bool,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            data: None,
            run_dir: None,
            init_from: None,
            task: Task::Relation,
            max_pattern_len: 35,
            min_row_degree: 5,
            train_ratio: 0.6,
            valid_ratio: 0.2,
            test_ratio: 0.2,
            eval_unseen: false,
            unseen_fraction: 0.2,
            dim: 25,
            aggregator: AggregatorKind::Attention,
            encoder: EncoderKind::Lookup,
            token_dim: 100,
            lstm_hidden: 0,
            attention_tied: true,
            separate_query: None,
            objective: Objective::Nll,
            batch_size: train.batch_size,
            learning_rate: 0.01,
            epsilon: 1e-8,
            l2: 0.0,
            negatives: 200,
            pattern_dropout: 10,
            max_epochs: train.max_epochs,
            patience: train.patience,
            seed: 0,
            clip_norm: 10.0,
            eval_negatives: 0,
            hits_k: 10,
            filter_text_rows: true,
            threads: 1,
        }
    }
}

/// Flag overrides for every config key. Unset flags leave the file value.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Triple file (row<TAB>column<TAB>kb|text).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
    /// Run directory or checkpoint whose column embeddings seed the model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_from: Option<PathBuf>,
    /// relation | type
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_pattern_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_row_degree: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_ratio: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_ratio: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_ratio: Option<f64>,
    /// Hold out a fraction of rows entirely and evaluate on them.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_unseen: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen_fraction: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// explicit | mean | max-pool | max-relation | attention
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<String>,
    /// lookup | lstm
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lstm_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_tied: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separate_query: Option<bool>,

    /// nll | bpr
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negatives: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern_dropout: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_negatives: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_text_rows: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

impl ConfigArgs {
    /// File values (if any) with flags applied on top, then validated.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let base = match &self.config {
            Some(path) => load_table(path)?,
            None => toml::Table::new(),
        };
        self.resolve_over(base)
    }

    /// Like [`Self::resolve`] but starting from an existing document.
    pub fn resolve_over(&self, mut base: toml::Table) -> anyhow::Result<RunConfig> {
        let overrides = toml::Table::try_from(self).map_err(|e| config_error(e.to_string()))?;
        base.extend(overrides);
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_table(path: &Path) -> anyhow::Result<toml::Table> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| config_error(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.split_ratios().validate()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.eval_protocol().validate()?;
        if !(0.0..1.0).contains(&self.unseen_fraction) {
            return Err(config_error(format!("unseen_fraction {} outside [0, 1)", self.unseen_fraction)));
        }
        if self.threads == 0 {
            return Err(config_error("threads must be at least 1"));
        }
        Ok(())
    }

    pub fn data_path(&self) -> anyhow::Result<&Path> {
        self.data.as_deref().ok_or_else(|| config_error("no data file given (--data)"))
    }

    pub fn run_dir_path(&self) -> anyhow::Result<&Path> {
        self.run_dir.as_deref().ok_or_else(|| config_error("no run directory given (--run-dir)"))
    }

    pub fn filters(&self) -> FilterConfig {
        FilterConfig {
            max_pattern_len: (self.max_pattern_len > 0).then_some(self.max_pattern_len),
            min_row_degree: self.min_row_degree,
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios::new(self.train_ratio, self.valid_ratio, self.test_ratio)
    }

    pub fn unseen(&self) -> Option<UnseenCount> {
        self.eval_unseen.then_some(UnseenCount::Fraction(self.unseen_fraction))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            aggregator: self.aggregator,
            encoder: self.encoder,
            token_dim: self.token_dim,
            lstm_hidden: (self.lstm_hidden > 0).then_some(self.lstm_hidden),
            attention_tied: self.attention_tied,
            separate_query: self.separate_query,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: LossConfig {
                objective: self.objective,
                negatives: self.negatives,
                l2: self.l2,
                pattern_dropout: self.pattern_dropout,
            },
            batch_size: self.batch_size,
            adam: AdamConfig::new(self.learning_rate, self.epsilon),
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            clip_norm: self.clip_norm,
        }
    }

    pub fn eval_protocol(&self) -> EvalProtocol {
        let mut p = match self.task {
            Task::Type => EvalProtocol::type_map(self.seed),
            Task::Relation => EvalProtocol::relation_rank(self.seed),
        };
        if self.eval_negatives > 0 {
            p.negatives_per_positive = Some(self.eval_negatives);
        }
        p.hits_k = self.hits_k;
        if p.mode == EvalMode::RelationRank {
            p.filter_text_rows = self.filter_text_rows;
        }
        p
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing run config")
    }
}
