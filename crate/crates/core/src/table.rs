//! Dense parameter tables with lazily updated per-row Adam state.

use rand::Rng;

use crate::math::{adam_update, AdamConfig};
use crate::Result;

/// A `rows x cols` matrix of learnable parameters, row-major, plus the Adam
/// moments for every entry. Each row keeps its own step count so that rows
/// untouched by a batch neither move nor age.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<u64>,
}

impl EmbeddingTable {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::from_data(name, rows, cols, vec![0.0; rows * cols])
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let data = (0..rows * cols)
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 })
            .collect();
        Self::from_data(name, rows, cols, data)
    }

    pub fn from_data(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "table data has wrong length");
        Self {
            name: name.into(),
            rows,
            cols,
            m: vec![0.0; data.len()],
            v: vec![0.0; data.len()],
            steps: vec![0; rows],
            data,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_steps(&self, i: usize) -> u64 {
        self.steps[i]
    }

    /// Adds `l2 * param` to `grad` and applies one Adam step to row `i`.
    pub fn apply_adam(&mut self, i: usize, grad: &[f64], l2: f64, config: &AdamConfig) -> Result<()> {
        let span = i * self.cols..(i + 1) * self.cols;
        let param = &mut self.data[span.clone()];
        let decayed;
        let grad = if l2 > 0.0 {
            decayed = grad
                .iter()
                .zip(param.iter())
                .map(|(g, p)| g + l2 * p)
                .collect::<Vec<_>>();
            &decayed[..]
        } else {
            grad
        };
        adam_update(
            param,
            grad,
            &mut self.m[span.clone()],
            &mut self.v[span],
            &mut self.steps[i],
            config,
        )
    }

    /// Drops optimizer state, keeping parameters.
    pub fn reset_optimizer(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.steps.iter_mut().for_each(|x| *x = 0);
    }

    /// Order-sensitive hash of the parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in &self.data {
            h ^= x.to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}
