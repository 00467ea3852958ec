//! Self-describing binary container for named matrices.
//!
//! Layout: the 8-byte magic `LMUCKPT\0`, a `u32` format version, a `u64`
//! header length, a JSON header, then every tensor's values as little-endian
//! `f64` in header order. Loading restores values bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 8] = b"LMUCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Header sizes beyond this are treated as corruption rather than allocated.
const MAX_HEADER_BYTES: u64 = 64 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    /// What the payload holds, e.g. `"model"` or `"adam"`.
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Matrix)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset,
        message: message.into(),
    })
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.push((name.into(), m));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, m)| TensorEntry {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, m) in &self.tensors {
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Container> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
            if bytes.len() - pos < n {
                return format_err(pos, format!("truncated {what}"));
            }
            let start = pos;
            pos += n;
            Ok((start, &bytes[start..pos]))
        };
        let (_, magic) = take(8, "magic")?;
        if magic != MAGIC {
            return format_err(0, "not a checkpoint (bad magic)");
        }
        let (at, version) = take(4, "version")?;
        let version = u32::from_le_bytes(version.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return format_err(at, format!("unsupported format version {version}"));
        }
        let (at, len) = take(8, "header length")?;
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes"));
        if len > MAX_HEADER_BYTES {
            return format_err(at, format!("implausible header length {len}"));
        }
        let (at, json) = take(len as usize, "header")?;
        let header: Header = serde_json::from_slice(json)
            .or_else(|e| format_err(at, format!("bad header: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let count = entry.rows.checked_mul(entry.cols).unwrap_or(usize::MAX);
            let (_, raw) = take(count.saturating_mul(8), &format!("tensor {}", entry.name))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((entry.name, Matrix::from_vec(entry.rows, entry.cols, data)?));
        }
        if pos != bytes.len() {
            return format_err(pos, "trailing bytes after payload");
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
