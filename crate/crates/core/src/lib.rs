//! Row-less universal schema for knowledge-base completion.
//!
//! Rows (entities or entity pairs) carry no learned parameters. A row vector is
//! built on the fly by aggregating the vectors of the columns observed with it,
//! and a (row, column) cell is scored as `sigmoid(v(row) . v(column))`. The
//! explicit-row baseline is kept alongside for comparison.
//!
//! Module map:
//!
//! - [`math`]: dot products, the stable sigmoid, Adam and global-norm clipping.
//! - [`table`]: dense parameter tables with per-row Adam state.
//! - [`data`]: triple files, vocabularies, filters, splits and synthetic data.
//! - [`encoder`]: column encoders (lookup table or LSTM over pattern tokens).
//! - [`aggregation`]: mean pool, max pool, max relation and attention.
//! - [`model`]: parameter layout, scoring and parameter counts.
//! - [`loss`]: negative sampling, sampled NLL, BPR and per-example backprop.
//! - [`training`]: the epoch loop with early stopping.
//! - [`evaluation`]: MAP, MRR and Hits@k ranking protocols.
//! - [`checkpoint`]: on-disk model format.

pub mod aggregation;
pub mod checkpoint;
pub mod data;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod loss;
pub mod math;
pub mod model;
pub mod par;
pub mod table;
pub mod training;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a `(seed, stream, index)` triple.
///
/// Every example, epoch and evaluation query draws from its own stream, which
/// keeps results independent of how work is scheduled across threads.
pub fn seeded_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut x = seed;
    for v in [stream, index] {
        x = splitmix64(x ^ splitmix64(v));
    }
    ChaCha8Rng::seed_from_u64(x)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
