use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ColumnId, RowId, Source};
use crate::{Error, Result};

const ROWS_FILE: &str = "rows.tsv";
const COLUMNS_FILE: &str = "columns.tsv";
const TOKENS_FILE: &str = "tokens.tsv";
const SOURCES_FILE: &str = "column_sources.tsv";

/// Bijective string <-> dense id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    pub fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_owned());
        self.ids.insert(s.to_owned(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<u32> {
        self.ids.get(s).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (i, name) in self.names.iter().enumerate() {
            writeln!(w, "{i}\t{name}")?;
        }
        w.flush()?;
        Ok(())
    }

    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut out = Interner::default();
        for (n, line) in text.lines().enumerate() {
            let (id, name) = parse_id_line(path, n + 1, line)?;
            if id != out.len() || out.ids.contains_key(name) {
                return Err(parse_err(path, n + 1, "ids must be dense, ascending and unique"));
            }
            out.intern(name);
        }
        Ok(out)
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        message: message.into(),
    }
}

fn parse_id_line<'a>(path: &Path, line_no: usize, line: &'a str) -> Result<(usize, &'a str)> {
    let (id, name) = line
        .split_once('\t')
        .ok_or_else(|| parse_err(path, line_no, "expected id<TAB>string"))?;
    let id = id
        .parse::<usize>()
        .map_err(|_| parse_err(path, line_no, format!("bad id {id:?}")))?;
    Ok((id, name))
}

/// Row, column and token vocabularies. TEXT columns additionally carry the
/// token-id sequence of their whitespace-tokenized pattern.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub rows: Interner,
    pub columns: Interner,
    pub tokens: Interner,
    column_sources: Vec<Source>,
    column_tokens: Vec<Option<Vec<u32>>>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_row(&mut self, name: &str) -> RowId {
        RowId(self.rows.intern(name))
    }

    /// Interns a column. A column string may only ever carry one source.
    pub fn add_column(&mut self, name: &str, source: Source) -> Result<ColumnId> {
        if let Some(id) = self.columns.get(name) {
            let existing = self.column_sources[id as usize];
            if existing != source {
                return Err(Error::Config(format!(
                    "column {name:?} appears as both {} and {}",
                    existing.as_str(),
                    source.as_str()
                )));
            }
            return Ok(ColumnId(id));
        }
        let tokens = match source {
            Source::Kb => None,
            Source::Text => {
                let toks: Vec<u32> = name
                    .split_whitespace()
                    .map(|t| self.tokens.intern(t))
                    .collect();
                if toks.is_empty() {
                    return Err(Error::Config(format!("text column {name:?} has no tokens")));
                }
                Some(toks)
            }
        };
        let id = self.columns.intern(name);
        self.column_sources.push(source);
        self.column_tokens.push(tokens);
        Ok(ColumnId(id))
    }

    pub fn row_id(&self, name: &str) -> Option<RowId> {
        self.rows.get(name).map(RowId)
    }

    pub fn column_id(&self, name: &str) -> Option<ColumnId> {
        self.columns.get(name).map(ColumnId)
    }

    pub fn row_name(&self, row: RowId) -> &str {
        self.rows.name(row.0)
    }

    pub fn column_name(&self, col: ColumnId) -> &str {
        self.columns.name(col.0)
    }

    pub fn column_source(&self, col: ColumnId) -> Source {
        self.column_sources[col.index()]
    }

    pub fn column_tokens(&self, col: ColumnId) -> Option<&[u32]> {
        self.column_tokens[col.index()].as_deref()
    }

    /// Token sequences for every column, `None` for KB columns.
    pub fn all_column_tokens(&self) -> &[Option<Vec<u32>>] {
        &self.column_tokens
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn kb_columns(&self) -> impl Iterator<Item = ColumnId> + '_ {
        self.column_sources
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Source::Kb)
            .map(|(i, _)| ColumnId(i as u32))
    }

    /// Writes `rows.tsv`, `columns.tsv`, `tokens.tsv` and
    /// `column_sources.tsv` (each `id<TAB>string`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.rows.write(&dir.join(ROWS_FILE))?;
        self.columns.write(&dir.join(COLUMNS_FILE))?;
        self.tokens.write(&dir.join(TOKENS_FILE))?;
        let mut w = BufWriter::new(fs::File::create(dir.join(SOURCES_FILE))?);
        for (i, s) in self.column_sources.iter().enumerate() {
            writeln!(w, "{i}\t{}", s.as_str())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rows = Interner::read(&dir.join(ROWS_FILE))?;
        let columns = Interner::read(&dir.join(COLUMNS_FILE))?;
        let tokens = Interner::read(&dir.join(TOKENS_FILE))?;
        let src_path = dir.join(SOURCES_FILE);
        let text = fs::read_to_string(&src_path)?;
        let mut column_sources = Vec::with_capacity(columns.len());
        for (n, line) in text.lines().enumerate() {
            let (id, s) = parse_id_line(&src_path, n + 1, line)?;
            let source = Source::parse(s)
                .ok_or_else(|| parse_err(&src_path, n + 1, format!("unknown source {s:?}")))?;
            if id != column_sources.len() {
                return Err(parse_err(&src_path, n + 1, "ids must be dense and ascending"));
            }
            column_sources.push(source);
        }
        if column_sources.len() != columns.len() {
            return Err(parse_err(&src_path, column_sources.len(), "column count mismatch"));
        }
        let mut column_tokens = Vec::with_capacity(columns.len());
        for (name, source) in columns.names().iter().zip(&column_sources) {
            column_tokens.push(match source {
                Source::Kb => None,
                Source::Text => Some(
                    name.split_whitespace()
                        .map(|t| {
                            tokens.get(t).ok_or_else(|| {
                                Error::Config(format!("token {t:?} missing from {TOKENS_FILE}"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
            });
        }
        Ok(Self {
            rows,
            columns,
            tokens,
            column_sources,
            column_tokens,
        })
    }
}
