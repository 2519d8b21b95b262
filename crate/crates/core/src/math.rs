//! Vector primitives, the sigmoid scorer, Adam and gradient clipping.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Inner product of two equal-length vectors.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 / (1 + exp(-x))`, branching on sign so neither side overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x)`, stable for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that the (row, column) cell is a fact.
pub fn sigmoid_score(row_vec: &[f64], col_vec: &[f64]) -> Result<f64> {
    dot(row_vec, col_vec).map(sigmoid)
}

/// Softmax with max subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// Adam hyperparameters. `beta1`/`beta2` stay at their defaults in practice;
/// learning rate and epsilon are tuned per experiment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn new(learning_rate: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            epsilon,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    /// Applies one bias-corrected Adam update to `param`.
    pub fn step(&mut self, param: &mut [f64], grad: &[f64], config: &AdamConfig) -> Result<()> {
        adam_update(
            param,
            grad,
            &mut self.first_moment,
            &mut self.second_moment,
            &mut self.step_count,
            config,
        )
    }
}

/// The Adam recurrence over raw slices, used both by [`AdamState`] and by
/// parameter tables that keep their moments in flat buffers.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: &mut u64,
    config: &AdamConfig,
) -> Result<()> {
    let n = param.len();
    for len in [grad.len(), m.len(), v.len()] {
        if len != n {
            return Err(Error::Dimension {
                expected: n,
                actual: len,
            });
        }
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient {bad}")));
    }
    *step += 1;
    let t = *step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for i in 0..n {
        let g = grad[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Sparse gradient accumulator keyed by (table index, row index).
///
/// Keys are kept ordered so that merging, norm computation and the optimizer
/// visit entries in the same order on every run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradSink {
    grads: BTreeMap<(usize, usize), Vec<f64>>,
    pub clip_norm: Option<f64>,
}

impl GradSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_clip_norm(clip_norm: f64) -> Self {
        Self {
            grads: BTreeMap::new(),
            clip_norm: Some(clip_norm),
        }
    }

    pub fn add(&mut self, table: usize, row: usize, grad: &[f64]) {
        self.add_scaled(table, row, grad, 1.0);
    }

    pub fn add_scaled(&mut self, table: usize, row: usize, grad: &[f64], scale: f64) {
        let slot = self
            .grads
            .entry((table, row))
            .or_insert_with(|| vec![0.0; grad.len()]);
        debug_assert_eq!(slot.len(), grad.len());
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += scale * g;
        }
    }

    pub fn merge(&mut self, other: GradSink) {
        for ((table, row), grad) in other.grads {
            match self.grads.entry((table, row)) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(grad);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    for (s, g) in e.get_mut().iter_mut().zip(&grad) {
                        *s += g;
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn get(&self, table: usize, row: usize) -> Option<&[f64]> {
        self.grads.get(&(table, row)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[f64])> {
        self.grads.iter().map(|(&(t, r), g)| (t, r, g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales every entry by `clip_norm / norm` when the global L2 norm
    /// exceeds `clip_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self) -> f64 {
        let norm = self.global_norm();
        if let Some(limit) = self.clip_norm {
            if norm > limit {
                self.scale(limit / norm);
            }
        }
        norm
    }
}
