use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Source, Triple, Vocabulary};
use crate::{seeded_rng, Error, Result};

const FILLERS: [&str; 3] = ["of", "the", "in"];
const BLOCK_WORDS: usize = 6;

/// Parameters of a planted block matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_blocks: usize,
    /// Probability of flipping a cell relative to the block structure.
    pub noise_rate: f64,
    pub seed: u64,
    /// Share of each block's columns that are TEXT patterns.
    pub text_fraction: f64,
}

impl SynthSpec {
    pub fn new(n_rows: usize, n_cols: usize, n_blocks: usize, noise_rate: f64, seed: u64) -> Self {
        Self {
            n_rows,
            n_cols,
            n_blocks,
            noise_rate,
            seed,
            text_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 || self.n_blocks == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if self.n_blocks > self.n_rows.min(self.n_cols) {
            return Err(Error::Config(format!(
                "{} blocks do not fit a {}x{} matrix",
                self.n_blocks, self.n_rows, self.n_cols
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(0.0..=1.0).contains(&self.text_fraction) {
            return Err(Error::Config("noise_rate and text_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ground-truth block of every row and column (indexed by vocabulary id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAssignment {
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
}

fn block_of(i: usize, n: usize, blocks: usize) -> usize {
    i * blocks / n
}

/// Generates a planted block matrix. Cell `(r, c)` is observed with
/// probability `1 - noise_rate` when `r` and `c` share a block and
/// `noise_rate` otherwise. The first `text_fraction` of each block's
/// columns are TEXT patterns built from block-specific words plus shared
/// filler words; the rest are KB columns.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Vocabulary, Vec<Triple>, BlockAssignment)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, 0x5e7d, 0);
    let mut vocab = Vocabulary::new();

    let row_blocks: Vec<usize> = (0..spec.n_rows)
        .map(|i| block_of(i, spec.n_rows, spec.n_blocks))
        .collect();
    let col_blocks: Vec<usize> = (0..spec.n_cols)
        .map(|j| block_of(j, spec.n_cols, spec.n_blocks))
        .collect();
    for i in 0..spec.n_rows {
        vocab.add_row(&format!("row{i}"));
    }

    let mut block_sizes = vec![0usize; spec.n_blocks];
    for &b in &col_blocks {
        block_sizes[b] += 1;
    }
    let mut pos_in_block = vec![0usize; spec.n_blocks];
    let mut used = HashSet::new();
    for (j, &b) in col_blocks.iter().enumerate() {
        let pos = pos_in_block[b];
        pos_in_block[b] += 1;
        let n_text = ((block_sizes[b] as f64) * spec.text_fraction).round() as usize;
        if pos < n_text {
            let name = text_pattern(b, &mut used, &mut rng);
            vocab.add_column(&name, Source::Text)?;
        } else {
            vocab.add_column(&format!("/synth/b{b}/kb{j}"), Source::Kb)?;
        }
    }

    let mut triples = Vec::new();
    for (r, &rb) in row_blocks.iter().enumerate() {
        for (c, &cb) in col_blocks.iter().enumerate() {
            let p = if rb == cb { 1.0 - spec.noise_rate } else { spec.noise_rate };
            let draw: f64 = rng.gen();
            if draw < p {
                let column = super::ColumnId(c as u32);
                triples.push(Triple::new(super::RowId(r as u32), column, vocab.column_source(column)));
            }
        }
    }
    Ok((
        vocab,
        triples,
        BlockAssignment {
            rows: row_blocks,
            columns: col_blocks,
        },
    ))
}

fn text_pattern<R: Rng>(block: usize, used: &mut HashSet<String>, rng: &mut R) -> String {
    for attempt in 0.. {
        let len = rng.gen_range(2..=4) + attempt / 16;
        let words: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.25) {
                    FILLERS[rng.gen_range(0..FILLERS.len())].to_owned()
                } else {
                    format!("b{block}w{}", rng.gen_range(0..BLOCK_WORDS))
                }
            })
            .collect();
        let name = words.join(" ");
        if used.insert(name.clone()) {
            return name;
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_blocks_are_block_diagonal() {
        let spec = SynthSpec::new(10, 6, 2, 0.0, 1);
        let (_, triples, blocks) = generate_synthetic(&spec).unwrap();
        assert_eq!(triples.len(), 2 * 5 * 3);
        for t in &triples {
            assert_eq!(blocks.rows[t.row.index()], blocks.columns[t.column.index()]);
        }
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let spec = SynthSpec::new(20, 8, 2, 0.1, 42);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_synthetic(&SynthSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn within_block_density_matches_noise_rate() {
        let spec = SynthSpec::new(50, 20, 2, 0.05, 7);
        let (vocab, triples, blocks) = generate_synthetic(&spec).unwrap();
        let within = triples
            .iter()
            .filter(|t| blocks.rows[t.row.index()] == blocks.columns[t.column.index()])
            .count();
        let cells = 2 * 25 * 10;
        let density = within as f64 / cells as f64;
        // binomial(500, 0.95) has sd ~0.0097
        assert!((density - 0.95).abs() <= 0.05, "density {density}");
        let across = triples.len() - within;
        let off = across as f64 / cells as f64;
        assert!((off - 0.05).abs() <= 0.05, "off-block density {off}");

        let text_cols = (0..20)
            .filter(|&c| vocab.column_source(super::super::ColumnId(c)) == Source::Text)
            .count();
        assert_eq!(text_cols, 10);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic(&SynthSpec::new(3, 20, 4, 0.0, 0)).is_err());
        assert!(generate_synthetic(&SynthSpec::new(5, 5, 1, 1.5, 0)).is_err());
    }
}
