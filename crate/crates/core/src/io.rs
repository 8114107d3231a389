//! JSON-lines helpers and the shared embedding-set record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One line of an embedding (or feature) set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub class: String,
    pub min_side_px: f64,
    pub vec: Vec<f64>,
}

/// Optional first line of a JSON-lines file, `{"header": {...}}`, naming
/// what the file holds and the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlHeader {
    pub kind: String,
    pub config_hash: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: JsonlHeader,
}

#[derive(Serialize)]
struct HeaderLineRef<'a> {
    header: &'a JsonlHeader,
}

/// Reads records, skipping a leading header line if there is one.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_jsonl_with_header(path).map(|(_, records)| records)
}

pub fn read_jsonl_with_header<T: DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<(Option<JsonlHeader>, Vec<T>)> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut header = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if out.is_empty() && header.is_none() {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok((header, out))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Like [`write_jsonl`] with a header line first.
pub fn write_jsonl_with_header<T: Serialize>(
    path: impl AsRef<Path>,
    header: &JsonlHeader,
    records: &[T],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &HeaderLineRef { header })?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_value(value)?.to_string();
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_keeps_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let recs = vec![EmbeddingRecord {
            id: "a/0".into(),
            class: "a".into(),
            min_side_px: 71.0,
            vec: vec![0.1 + 0.2, -1.0 / 3.0, 1e-17],
        }];
        write_jsonl(&path, &recs).unwrap();
        let back: Vec<EmbeddingRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"x\"}\n").unwrap();
        let err = read_jsonl::<EmbeddingRecord>(&path).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn header_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let header = JsonlHeader {
            kind: "features".into(),
            config_hash: "ab".into(),
        };
        let recs = vec![EmbeddingRecord {
            id: "a/0".into(),
            class: "a".into(),
            min_side_px: 12.0,
            vec: vec![1.0],
        }];
        write_jsonl_with_header(&path, &header, &recs).unwrap();
        let (h, back) = read_jsonl_with_header::<EmbeddingRecord>(&path).unwrap();
        assert_eq!(h, Some(header));
        assert_eq!(back, recs);
        assert_eq!(read_jsonl::<EmbeddingRecord>(&path).unwrap(), recs);
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }
}
