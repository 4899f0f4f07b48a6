//! Binary embedding store.
//!
//! Layout (little endian): magic `PCLE`, version `u16` = 1, dimension `u32`,
//! record count `u64`, then per record a `u32` text length, the UTF-8 text and
//! `dimension` `f32` values. Nothing may follow the last record.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{normalize_label, EmbeddingVector, TextEncoder};
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"PCLE";
pub const STORE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredEmbedding {
    pub text: String,
    pub values: Vec<f32>,
}

impl StoredEmbedding {
    pub fn from_embedding(text: impl Into<String>, v: &EmbeddingVector) -> Self {
        StoredEmbedding {
            text: text.into(),
            values: v.as_slice().iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_embedding(&self) -> Result<EmbeddingVector> {
        EmbeddingVector::normalize(self.values.iter().map(|&x| f64::from(x)).collect())
    }
}

pub fn encode_store(records: &[StoredEmbedding]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.values.len());
    if let Some(bad) = records.iter().find(|r| r.values.len() != dim) {
        return Err(Error::Format(format!(
            "record {:?} has dimension {}, expected {dim}",
            bad.text,
            bad.values.len()
        )));
    }
    let mut out = Vec::with_capacity(18 + records.len() * (8 + 4 * dim));
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        let len = u32::try_from(r.text.len())
            .map_err(|_| Error::Format(format!("label of {} bytes is too long", r.text.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(r.text.as_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated store: need {n} bytes for {what} at offset {}, {} left",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn decode_store(buf: &[u8]) -> Result<Vec<StoredEmbedding>> {
    let mut r = Reader { buf, pos: 0 };
    if &r.array::<4>("magic")? != STORE_MAGIC {
        return Err(Error::Format("bad magic, not an embedding store".into()));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != STORE_VERSION {
        return Err(Error::Format(format!("unsupported store version {version}")));
    }
    let dim = u32::from_le_bytes(r.array("dimension")?) as usize;
    let count = u64::from_le_bytes(r.array("count")?);
    // Each record needs at least its length prefix; reject absurd counts early.
    let min_record = 4 + 4 * dim as u64;
    if count.saturating_mul(min_record) > (buf.len() - r.pos) as u64 {
        return Err(Error::Format(format!(
            "truncated store: header announces {count} records of dimension {dim}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let len = u32::from_le_bytes(r.array("text length")?) as usize;
        let text = std::str::from_utf8(r.take(len, "text")?)
            .map_err(|e| Error::Format(format!("record {i}: label is not UTF-8: {e}")))?
            .to_string();
        let raw = r.take(4 * dim, "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        out.push(StoredEmbedding { text, values });
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records of dimension {dim}",
            buf.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn write_store(path: &Path, records: &[StoredEmbedding]) -> Result<()> {
    let bytes = encode_store(records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<Vec<StoredEmbedding>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}

/// Encoder backed by precomputed embeddings, e.g. exported from a real text
/// encoder. Lookup is by normalized label text.
pub struct StoreEncoder {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

impl StoreEncoder {
    pub fn from_records(records: &[StoredEmbedding]) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.values.len());
        let mut table = HashMap::with_capacity(records.len());
        for r in records {
            table.insert(normalize_label(&r.text), r.to_embedding()?);
        }
        Ok(StoreEncoder { dim, table })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::from_records(&read_store(path)?)
    }
}

impl TextEncoder for StoreEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        self.table
            .get(&normalize_label(text))
            .cloned()
            .ok_or_else(|| Error::EncoderUnavailable(format!("no stored embedding for {text:?}")))
    }
}
