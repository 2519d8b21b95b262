use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ColumnId, RowId, Source, Triple, Vocabulary};
use crate::{seeded_rng, Error, Result};

/// Fractions of KB triples assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) || self.train <= 0.0 {
            return Err(Error::Config(format!("invalid split ratios {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// How many rows to hold out as unseen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UnseenCount {
    Count(usize),
    /// Fraction of the rows that have at least one KB triple.
    Fraction(f64),
}

/// Train/validation/test partition plus the per-row evidence used to build
/// row representations.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Triple>,
    pub validation: Vec<Triple>,
    pub test: Vec<Triple>,
    /// For each row, the ascending ids of its training columns (plus the
    /// retained TEXT evidence of unseen rows).
    pub observed: Vec<Vec<ColumnId>>,
    pub unseen_rows: BTreeSet<RowId>,
    pub n_columns: usize,
}

impl DatasetSplit {
    pub fn n_rows(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_columns(&self, row: RowId) -> &[ColumnId] {
        &self.observed[row.index()]
    }

    pub fn is_observed(&self, row: RowId, col: ColumnId) -> bool {
        self.observed[row.index()].binary_search(&col).is_ok()
    }

    pub fn is_unseen(&self, row: RowId) -> bool {
        self.unseen_rows.contains(&row)
    }

    /// Test triples whose row was available at training time.
    pub fn test_seen(&self) -> Vec<Triple> {
        self.test.iter().copied().filter(|t| !self.is_unseen(t.row)).collect()
    }

    /// Test triples whose row was held out of training entirely.
    pub fn test_unseen(&self) -> Vec<Triple> {
        self.test.iter().copied().filter(|t| self.is_unseen(t.row)).collect()
    }

    /// Rows with at least one training triple.
    pub fn trained_rows(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_rows()];
        for t in &self.train {
            out[t.row.index()] = true;
        }
        out
    }

    fn rebuild_observed(&mut self, n_rows: usize) {
        let mut observed = vec![Vec::new(); n_rows];
        for t in &self.train {
            observed[t.row.index()].push(t.column);
        }
        for cols in &mut observed {
            cols.sort_unstable();
            cols.dedup();
        }
        self.observed = observed;
    }
}

/// Random partition of the KB triples by `ratios`; TEXT triples are evidence
/// and always go to train.
pub fn split_dataset(
    vocab: &Vocabulary,
    triples: &[Triple],
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut kb: Vec<Triple> = triples.iter().copied().filter(|t| t.source == Source::Kb).collect();
    let mut train: Vec<Triple> = triples.iter().copied().filter(|t| t.source == Source::Text).collect();
    kb.sort_unstable();
    kb.dedup();
    kb.shuffle(&mut seeded_rng(seed, 0x5117, 0));

    let n = kb.len();
    let n_train = (((n as f64) * ratios.train).round() as usize).min(n);
    let n_valid = (((n as f64) * ratios.validation).round() as usize).min(n - n_train);
    let mut validation = kb[n_train..n_train + n_valid].to_vec();
    let mut test = kb[n_train + n_valid..].to_vec();
    train.extend_from_slice(&kb[..n_train]);
    train.sort_unstable();
    train.dedup();
    validation.sort_unstable();
    test.sort_unstable();

    let mut split = DatasetSplit {
        train,
        validation,
        test,
        observed: Vec::new(),
        unseen_rows: BTreeSet::new(),
        n_columns: vocab.n_columns(),
    };
    split.rebuild_observed(vocab.n_rows());
    Ok(split)
}

/// Seen-row split followed by holding out whole rows: every KB triple of a
/// held-out row becomes a test positive, and none of its triples stay in
/// train. Its TEXT columns remain in `observed` as evidence for building its
/// representation at test time.
pub fn make_unseen_row_split(
    vocab: &Vocabulary,
    triples: &[Triple],
    ratios: SplitRatios,
    n_unseen: UnseenCount,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut split = split_dataset(vocab, triples, ratios, seed)?;

    let candidates: BTreeSet<RowId> = triples
        .iter()
        .filter(|t| t.source == Source::Kb)
        .map(|t| t.row)
        .collect();
    let n = match n_unseen {
        UnseenCount::Count(n) => n,
        UnseenCount::Fraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("unseen fraction {f} outside [0, 1)")));
            }
            ((candidates.len() as f64) * f).round() as usize
        }
    };
    if n == 0 {
        return Ok(split);
    }
    if n >= candidates.len() {
        return Err(Error::Config(format!(
            "cannot hold out {n} rows: only {} rows have KB triples",
            candidates.len()
        )));
    }

    let mut pool: Vec<RowId> = candidates.into_iter().collect();
    pool.shuffle(&mut seeded_rng(seed, 0x0b5e, 1));
    let unseen: BTreeSet<RowId> = pool.into_iter().take(n).collect();

    let mut evidence: Vec<(RowId, ColumnId)> = Vec::new();
    let mut moved: Vec<Triple> = Vec::new();
    split.train.retain(|t| {
        if !unseen.contains(&t.row) {
            return true;
        }
        match t.source {
            Source::Kb => moved.push(*t),
            Source::Text => evidence.push((t.row, t.column)),
        }
        false
    });
    split.validation.retain(|t| {
        let keep = !unseen.contains(&t.row);
        if !keep {
            moved.push(*t);
        }
        keep
    });
    split.test.extend(moved);
    split.test.sort_unstable();
    split.test.dedup();
    if split.test.is_empty() {
        return Err(Error::Config("unseen-row split produced no test positives".into()));
    }

    split.rebuild_observed(vocab.n_rows());
    for (row, col) in evidence {
        split.observed[row.index()].push(col);
    }
    for &row in &unseen {
        split.observed[row.index()].sort_unstable();
    }
    split.unseen_rows = unseen;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn kb_fixture(n_rows: usize, n_cols: usize) -> (Vocabulary, Vec<Triple>) {
        let mut v = Vocabulary::new();
        let mut ts = Vec::new();
        for r in 0..n_rows {
            let row = v.add_row(&format!("e{r}"));
            for c in 0..n_cols {
                let col = v.add_column(&format!("/t{c}"), Source::Kb).unwrap();
                ts.push(Triple::new(row, col, Source::Kb));
            }
        }
        (v, ts)
    }

    #[test]
    fn sixty_twenty_twenty() {
        let (v, ts) = kb_fixture(10, 10);
        let s = split_dataset(&v, &ts, SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (60, 20, 20));
        let again = split_dataset(&v, &ts, SplitRatios::default(), 7).unwrap();
        assert_eq!(s, again);
        let all = split_dataset(&v, &ts, SplitRatios::new(1.0, 0.0, 0.0), 7).unwrap();
        assert_eq!(all.train.len(), 100);
        assert!(all.validation.is_empty() && all.test.is_empty());
    }

    #[test]
    fn ratio_sum_is_checked() {
        let (v, ts) = kb_fixture(2, 2);
        let err = split_dataset(&v, &ts, SplitRatios::new(0.5, 0.2, 0.2), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn mixed_fixture() -> (Vocabulary, Vec<Triple>) {
        let mut v = Vocabulary::new();
        let mut ts = Vec::new();
        for r in 0..10 {
            let row = v.add_row(&format!("e{r}"));
            for c in 0..3 {
                let col = v.add_column(&format!("/t{c}"), Source::Kb).unwrap();
                ts.push(Triple::new(row, col, Source::Kb));
                let col = v.add_column(&format!("pattern {c}"), Source::Text).unwrap();
                ts.push(Triple::new(row, col, Source::Text));
            }
        }
        (v, ts)
    }

    #[test]
    fn unseen_rows_leave_train_but_keep_text_evidence() {
        let (v, ts) = mixed_fixture();
        let s = make_unseen_row_split(&v, &ts, SplitRatios::default(), UnseenCount::Count(2), 3)
            .unwrap();
        assert_eq!(s.unseen_rows.len(), 2);
        for row in &s.unseen_rows {
            assert!(s.train.iter().all(|t| t.row != *row));
            assert!(s.validation.iter().all(|t| t.row != *row));
            let obs = s.observed_columns(*row);
            assert_eq!(obs.len(), 3);
            assert!(obs.iter().all(|c| v.column_source(*c) == Source::Text));
            let kb_test = s.test.iter().filter(|t| t.row == *row).count();
            assert_eq!(kb_test, 3);
        }
        assert_eq!(s.test_unseen().len(), 6);
    }

    #[test]
    fn zero_unseen_matches_plain_split() {
        let (v, ts) = mixed_fixture();
        let a = make_unseen_row_split(&v, &ts, SplitRatios::default(), UnseenCount::Count(0), 9)
            .unwrap();
        let b = split_dataset(&v, &ts, SplitRatios::default(), 9).unwrap();
        assert_eq!(a, b);
        assert!(make_unseen_row_split(&v, &ts, SplitRatios::default(), UnseenCount::Count(10), 9)
            .is_err());
    }

    proptest! {
        #[test]
        fn split_invariants(seed in 0u64..500, n_unseen in 0usize..5) {
            let (v, ts) = mixed_fixture();
            let s = make_unseen_row_split(&v, &ts, SplitRatios::default(), UnseenCount::Count(n_unseen), seed).unwrap();
            let train: HashSet<_> = s.train.iter().map(|t| (t.row, t.column)).collect();
            let valid: HashSet<_> = s.validation.iter().map(|t| (t.row, t.column)).collect();
            for t in &s.test {
                prop_assert!(!train.contains(&(t.row, t.column)));
                prop_assert!(!valid.contains(&(t.row, t.column)));
            }
            for t in &s.validation {
                prop_assert!(!train.contains(&(t.row, t.column)));
            }
            for (r, cols) in s.observed.iter().enumerate() {
                let row = RowId(r as u32);
                prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
                let mut expect: Vec<ColumnId> = s.train.iter().filter(|t| t.row == row).map(|t| t.column).collect();
                if s.is_unseen(row) {
                    expect = ts.iter().filter(|t| t.row == row && t.source == Source::Text).map(|t| t.column).collect();
                }
                expect.sort_unstable();
                prop_assert_eq!(cols, &expect);
            }
        }
    }
}
