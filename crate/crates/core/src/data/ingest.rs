use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Source, Triple, Vocabulary};
use crate::{Error, Result};

/// Ingestion filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// TEXT columns with more tokens than this are dropped.
    pub max_pattern_len: Option<usize>,
    /// Rows with fewer distinct KB columns than this are dropped.
    pub min_row_degree: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_pattern_len: Some(35),
            min_row_degree: 5,
        }
    }
}

impl FilterConfig {
    pub fn none() -> Self {
        Self {
            max_pattern_len: None,
            min_row_degree: 0,
        }
    }
}

/// A parsed but not yet interned line of a triple file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub row: String,
    pub column: String,
    pub source: Source,
    pub line: usize,
}

/// Parses `row<TAB>column<TAB>source` lines. Blank lines and lines starting
/// with `#` are skipped.
pub fn parse_triples<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawTriple>> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (row, column, source) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if row.is_empty() || column.is_empty() {
            return Err(err(line_no, "empty row or column".into()));
        }
        let source = Source::parse(source)
            .ok_or_else(|| err(line_no, format!("unknown source {source:?} (expected kb or text)")))?;
        out.push(RawTriple {
            row: row.to_owned(),
            column: column.to_owned(),
            source,
            line: line_no,
        });
    }
    Ok(out)
}

/// Reads a triple file, applies the filters, deduplicates and interns.
///
/// Ids are assigned in order of first appearance among surviving triples.
pub fn ingest_triples(path: &Path, filters: &FilterConfig) -> Result<(Vocabulary, Vec<Triple>)> {
    let file = fs::File::open(path)?;
    let raw = parse_triples(BufReader::new(file), path)?;
    build(raw, filters, path)
}

fn build(raw: Vec<RawTriple>, filters: &FilterConfig, path: &Path) -> Result<(Vocabulary, Vec<Triple>)> {
    let mut sources: HashMap<&str, Source> = HashMap::new();
    for t in &raw {
        match sources.get(t.column.as_str()) {
            Some(&s) if s != t.source => {
                return Err(Error::Parse {
                    path: PathBuf::from(path),
                    line: t.line,
                    message: format!("column {:?} was earlier marked {}", t.column, s.as_str()),
                })
            }
            _ => {
                sources.insert(&t.column, t.source);
            }
        }
    }

    let kept: Vec<&RawTriple> = raw
        .iter()
        .filter(|t| match (t.source, filters.max_pattern_len) {
            (Source::Text, Some(max)) => t.column.split_whitespace().count() <= max,
            _ => true,
        })
        .collect();

    let mut kb_degree: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for t in &kept {
        let entry = kb_degree.entry(t.row.as_str()).or_default();
        if t.source == Source::Kb {
            entry.insert(t.column.as_str());
        }
    }

    let mut vocab = Vocabulary::new();
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    for t in kept {
        if kb_degree[t.row.as_str()].len() < filters.min_row_degree {
            continue;
        }
        let row = vocab.add_row(&t.row);
        let column = vocab.add_column(&t.column, t.source).map_err(|e| Error::Parse {
            path: PathBuf::from(path),
            line: t.line,
            message: e.to_string(),
        })?;
        if seen.insert((row, column)) {
            triples.push(Triple::new(row, column, t.source));
        }
    }
    if triples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((vocab, triples))
}

/// Writes triples in the ingestible file format.
pub fn write_triples(path: &Path, vocab: &Vocabulary, triples: &[Triple]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in triples {
        writeln!(
            w,
            "{}\t{}\t{}",
            vocab.row_name(t.row),
            vocab.column_name(t.column),
            t.source.as_str()
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(text: &str, filters: &FilterConfig) -> Result<(Vocabulary, Vec<Triple>)> {
        let p = Path::new("mem.tsv");
        build(parse_triples(text.as_bytes(), p)?, filters, p)
    }

    #[test]
    fn long_patterns_are_dropped() {
        let long = vec!["w"; 36].join(" ");
        let ok = vec!["w"; 35].join(" ");
        let text = format!("a|b\t{long}\ttext\na|b\t{ok}\ttext\na|b\t/r\tkb\n");
        let filters = FilterConfig {
            max_pattern_len: Some(35),
            min_row_degree: 0,
        };
        let (vocab, triples) = ingest_str(&text, &filters).unwrap();
        assert_eq!(triples.len(), 2);
        assert!(vocab.column_id(&long).is_none());
        assert!(vocab.column_id(&ok).is_some());
    }

    #[test]
    fn rows_with_few_kb_types_are_dropped() {
        let mut text = String::new();
        for t in 0..4 {
            text += &format!("e1\t/type{t}\tkb\n");
        }
        for t in 0..5 {
            text += &format!("e2\t/type{t}\tkb\n");
        }
        text += "e1\tsinger\ttext\n";
        let (vocab, triples) = ingest_str(&text, &FilterConfig::default()).unwrap();
        assert!(vocab.row_id("e1").is_none());
        assert_eq!(vocab.n_rows(), 1);
        assert_eq!(triples.len(), 5);
        assert!(vocab.column_id("singer").is_none());
    }

    #[test]
    fn duplicates_collapse() {
        let (_, triples) =
            ingest_str("a\t/t\tkb\na\t/t\tkb\n\n# comment\n", &FilterConfig::none()).unwrap();
        assert_eq!(triples.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = ingest_str("a\t/t\tkb\nbroken line\n", &FilterConfig::none()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = ingest_str("a\t/t\tdb\n", &FilterConfig::none()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = ingest_str("a\t/t\tkb\nb\t/t\ttext\n", &FilterConfig::none()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_result_is_an_error() {
        assert!(matches!(
            ingest_str("# nothing\n", &FilterConfig::none()),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            ingest_str("a\t/t\tkb\n", &FilterConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn write_then_ingest_preserves_triples() {
        let text = "a|b\tlives in\ttext\na|b\t/loc\tkb\nc|d\t/loc\tkb\n";
        let (vocab, triples) = ingest_str(text, &FilterConfig::none()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        write_triples(&p, &vocab, &triples).unwrap();
        let (v2, t2) = ingest_triples(&p, &FilterConfig::none()).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(t2, triples);
    }
}
