//! On-disk model format.
//!
//! A checkpoint directory holds `meta.json` and one `<table>.bin` per
//! parameter table. Each blob is two little-endian `u64` dimensions (rows,
//! cols) followed by `rows * cols` little-endian `f32` values, row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::loss::Objective;
use crate::model::{Model, ModelConfig};
use crate::table::EmbeddingTable;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub objective: Objective,
    pub seed: u64,
    pub n_rows: usize,
    pub n_columns: usize,
    pub n_tokens: usize,
    /// Hash of the column strings, to catch a mismatched vocabulary.
    pub vocab_fingerprint: String,
    pub tables: Vec<TableMeta>,
    /// Rows with a learned embedding (explicit-row models only).
    pub trained_rows: Vec<u32>,
}

/// FNV-1a over row and column strings.
pub fn vocab_fingerprint(vocab: &Vocabulary) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for name in vocab.rows.names().iter().chain(vocab.columns.names()) {
        feed(name.as_bytes());
        feed(&[0]);
    }
    format!("{h:016x}")
}

fn blob_name(table: &str) -> String {
    format!("{table}.bin")
}

pub fn write_blob<W: Write>(table: &EmbeddingTable, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * table.len());
    buf.extend_from_slice(&(table.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(table.cols() as u64).to_le_bytes());
    for &x in table.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_blob<R: Read>(name: &str, mut r: R) -> Result<EmbeddingTable> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Checkpoint(format!("blob {name} is truncated")));
    }
    let dim = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
    let (rows, cols) = (dim(0), dim(8));
    let body = &bytes[16..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(Error::Checkpoint(format!(
            "blob {name} declares {rows}x{cols} but holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(EmbeddingTable::from_data(name, rows, cols, data))
}

/// Writes `model` into `dir` (created if needed).
pub fn save(dir: &Path, model: &Model, vocab: &Vocabulary, objective: Objective, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tables = Vec::new();
    for t in model.tables() {
        let file = blob_name(t.name());
        write_blob(t, fs::File::create(dir.join(&file))?)?;
        tables.push(TableMeta {
            name: t.name().to_owned(),
            rows: t.rows(),
            cols: t.cols(),
            file,
        });
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        model: model.config().clone(),
        objective,
        seed,
        n_rows: model.n_rows(),
        n_columns: model.n_columns(),
        n_tokens: model.n_tokens(),
        vocab_fingerprint: vocab_fingerprint(vocab),
        tables,
        trained_rows: model
            .trained_rows()
            .iter()
            .enumerate()
            .filter(|(_, t)| **t)
            .map(|(i, _)| i as u32)
            .collect(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(dir.join(META_FILE), json + "\n")?;
    Ok(())
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Loads a checkpoint written for `vocab`.
pub fn load(dir: &Path, vocab: &Vocabulary) -> Result<(Model, CheckpointMeta)> {
    let meta = load_meta(dir)?;
    if meta.n_rows != vocab.n_rows()
        || meta.n_columns != vocab.n_columns()
        || meta.n_tokens != vocab.n_tokens()
        || meta.vocab_fingerprint != vocab_fingerprint(vocab)
    {
        return Err(Error::Checkpoint(format!(
            "vocabulary mismatch: checkpoint has {} rows / {} columns / {} tokens, data has {} / {} / {}",
            meta.n_rows,
            meta.n_columns,
            meta.n_tokens,
            vocab.n_rows(),
            vocab.n_columns(),
            vocab.n_tokens()
        )));
    }
    let mut tables = Vec::with_capacity(meta.tables.len());
    for t in &meta.tables {
        let path = dir.join(&t.file);
        let file = fs::File::open(&path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        let table = read_blob(&t.name, std::io::BufReader::new(file))?;
        if table.rows() != t.rows || table.cols() != t.cols {
            return Err(Error::Checkpoint(format!("blob {} does not match its metadata", t.file)));
        }
        tables.push(table);
    }
    let n_trained = if meta.model.aggregator.is_row_less() { 0 } else { vocab.n_rows() };
    let mut trained = vec![false; n_trained];
    for &r in &meta.trained_rows {
        let slot = trained
            .get_mut(r as usize)
            .ok_or_else(|| Error::Checkpoint(format!("trained row {r} out of range")))?;
        *slot = true;
    }
    let model = Model::from_tables(meta.model.clone(), vocab, trained, tables)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::AggregatorKind;
    use crate::data::Source;
    use crate::model::init_model;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::new();
        for r in 0..4 {
            v.add_row(&format!("e{r}"));
        }
        for c in 0..6 {
            v.add_column(&format!("/c{c}"), Source::Kb).unwrap();
        }
        v.add_column("born in", Source::Text).unwrap();
        v
    }

    #[test]
    fn blob_layout() {
        let t = EmbeddingTable::from_data("x", 1, 2, vec![1.0, -2.5]);
        let mut buf = Vec::new();
        write_blob(&t, &mut buf).unwrap();
        assert_eq!(&buf[..8], &1u64.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&buf[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(read_blob("x", &buf[..]).unwrap(), t);
        assert!(read_blob("x", &buf[..20]).is_err());
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        for kind in AggregatorKind::ALL {
            let m = init_model(&crate::model::ModelConfig::new(5, kind), &v, vec![true, false, true, true], 4, None).unwrap();
            let a = dir.path().join(format!("{kind}-a"));
            let b = dir.path().join(format!("{kind}-b"));
            save(&a, &m, &v, Objective::Nll, 4).unwrap();
            let (loaded, meta) = load(&a, &v).unwrap();
            assert_eq!(meta.model.aggregator, kind);
            assert_eq!(loaded.trained_rows(), m.trained_rows());
            save(&b, &loaded, &v, Objective::Nll, 4).unwrap();
            for entry in fs::read_dir(&a).unwrap() {
                let name = entry.unwrap().file_name();
                assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
            }
        }
    }

    #[test]
    fn mismatched_vocab_is_rejected() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let m = init_model(&crate::model::ModelConfig::new(5, AggregatorKind::MeanPool), &v, vec![], 0, None).unwrap();
        save(dir.path(), &m, &v, Objective::Nll, 0).unwrap();
        let mut other = vocab();
        other.add_column("/extra", Source::Kb).unwrap();
        assert!(matches!(load(dir.path(), &other), Err(Error::Checkpoint(_))));
        assert!(matches!(load(&dir.path().join("missing"), &v), Err(Error::Checkpoint(_))));
    }
}
