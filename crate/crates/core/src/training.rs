//! Epoch loop, batching, optimizer steps and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Triple};
use crate::evaluation::{evaluate, EvalProtocol, Universe};
use crate::loss::{example_loss, make_example, LossConfig};
use crate::math::{AdamConfig, GradSink};
use crate::model::{EncoderKind, Model};
use crate::{par, seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Extra epochs allowed after the best one before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm cap, applied in LSTM mode only.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            batch_size: 512,
            adam: AdamConfig::default(),
            max_epochs: 50,
            patience: 5,
            seed: 0,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.epsilon > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate, epsilon and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean example loss over the epoch.
    pub loss: f64,
    pub val_metric: Option<f64>,
    /// Largest batch gradient norm after clipping.
    pub max_grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters the model holds after training.
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// The report with wall-clock fields zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }

    /// `epoch<TAB>loss<TAB>val_metric` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\tval_metric\n");
        for e in &self.epochs {
            let val = e.val_metric.map_or("NA".to_owned(), |v| v.to_string());
            out.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.loss, val));
        }
        out
    }
}

/// Result of one batch's forward/backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    /// Mean example loss.
    pub loss: f64,
    /// Mean gradient, clipped when a clip norm was given.
    pub sink: GradSink,
    pub norm_before_clip: f64,
}

/// Forward/backward over `batch`. Example `i` draws from its own rng stream
/// `(seed, stream, first_index + i)`, and per-example gradients are merged in
/// batch order, so the result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    model: &Model,
    split: &DatasetSplit,
    batch: &[Triple],
    loss: &LossConfig,
    clip_norm: Option<f64>,
    seed: u64,
    stream: u64,
    first_index: u64,
) -> Result<BatchGradients> {
    let results = par::map_indexed(batch, |i, triple| -> Result<(f64, GradSink)> {
        let mut rng = seeded_rng(seed, stream, first_index + i as u64);
        let example = make_example(split, triple, loss, &mut rng)?;
        let mut sink = GradSink::new();
        let l = example_loss(model, split.observed_columns(triple.row), &example, loss, &mut rng, &mut sink)?;
        Ok((l, sink))
    });
    let mut total = 0.0;
    let mut sink = GradSink::new();
    for r in results {
        let (l, s) = r?;
        total += l;
        sink.merge(s);
    }
    let n = batch.len().max(1) as f64;
    sink.scale(1.0 / n);
    sink.clip_norm = clip_norm;
    let norm_before_clip = sink.clip_global_norm();
    Ok(BatchGradients {
        loss: total / n,
        sink,
        norm_before_clip,
    })
}

/// Trains `model` in place and leaves it holding the best-validation
/// parameters. Without validation positives every epoch counts as an
/// improvement and training runs for `max_epochs`.
pub fn train(
    model: &mut Model,
    split: &DatasetSplit,
    universe: &Universe,
    config: &TrainConfig,
    validation: &EvalProtocol,
) -> Result<TrainReport> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let clip = (model.config().encoder == EncoderKind::Lstm).then_some(config.clip_norm);
    let mut order: Vec<Triple> = split.train.clone();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, Option<f64>, Model)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut seeded_rng(config.seed, 0x7a11, epoch as u64));
        let stream = 0xba7c_0000_0000 | epoch as u64;
        let mut total = 0.0;
        let mut max_norm: f64 = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let first = (b * config.batch_size) as u64;
            let g = batch_gradients(model, split, batch, &config.loss, clip, config.seed, stream, first)
                .map_err(|e| name_batch(e, epoch, b))?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch}, batch {b}: loss {}", g.loss)));
            }
            max_norm = max_norm.max(g.sink.global_norm());
            model
                .apply_gradients(&g.sink, &config.adam, config.loss.l2)
                .map_err(|e| name_batch(e, epoch, b))?;
            total += g.loss * batch.len() as f64;
        }
        let loss = total / order.len() as f64;

        let val_metric = if split.validation.is_empty() {
            None
        } else {
            evaluate(model, split, universe, validation, &split.validation)?.primary_metric()
        };
        log::info!("epoch {epoch}: loss {loss:.6} validation {val_metric:?}");
        epochs.push(EpochStats {
            epoch,
            loss,
            val_metric,
            max_grad_norm: max_norm,
            seconds: start.elapsed().as_secs_f64(),
        });

        let improved = match (&best, val_metric) {
            (None, _) | (_, None) => true,
            (Some((_, Some(b), _)), Some(v)) => v > *b,
            (Some((_, None, _)), Some(_)) => true,
        };
        if improved {
            best = Some((epoch, val_metric, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }

    let (best_epoch, best_metric, snapshot) = best.expect("at least one epoch ran");
    model.copy_parameters_from(&snapshot);
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_metric,
        stopped_early,
    })
}

fn name_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}
