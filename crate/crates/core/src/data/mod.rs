//! Triples, vocabularies, filtering and dataset splits.

mod ingest;
mod split;
mod synth;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ingest::{ingest_triples, parse_triples, write_triples, FilterConfig, RawTriple};
pub use split::{make_unseen_row_split, split_dataset, DatasetSplit, SplitRatios, UnseenCount};
pub use synth::{generate_synthetic, BlockAssignment, SynthSpec};
pub use vocab::{Interner, Vocabulary};

/// Dense row index (an entity, or an entity pair for relation extraction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowId(pub u32);

/// Dense column index (a KB relation/type or a textual pattern).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnId(pub u32);

impl RowId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ColumnId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row#{}", self.0)
    }
}

impl fmt::Display for ColumnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "col#{}", self.0)
    }
}

/// Where a column comes from: a structured KB or raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Kb,
    Text,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Kb => "kb",
            Source::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("kb") {
            Some(Source::Kb)
        } else if s.eq_ignore_ascii_case("text") {
            Some(Source::Text)
        } else {
            None
        }
    }
}

/// One observed (row, column) fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub row: RowId,
    pub column: ColumnId,
    pub source: Source,
}

impl Triple {
    pub fn new(row: RowId, column: ColumnId, source: Source) -> Self {
        Self {
            row,
            column,
            source,
        }
    }
}
