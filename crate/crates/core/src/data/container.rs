//! Flat binary export for generated arrays.
//!
//! Layout: magic `LMUDATA\0`, `u32` version, `u8` dtype tag (1 = `f64`),
//! `u32` rank, one `u64` per dimension, then the values as little-endian
//! `f64` in row-major order.

use std::io::Write;
use std::path::Path;

use crate::data::{LabeledDataset, Targets};
use crate::error::{dim_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"LMUDATA\0";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FlatArray {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl FlatArray {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != values.len() {
            return dim_err(format!("dims {dims:?} do not hold {} values", values.len()));
        }
        Ok(FlatArray { dims, values })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25 + 8 * (self.dims.len() + self.values.len()));
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.push(DTYPE_F64);
        out.extend((self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend((d as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, message: &str| -> Error {
            Error::Format {
                offset,
                message: message.to_string(),
            }
        };
        if bytes.len() < 17 {
            return Err(err(bytes.len(), "truncated header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(err(0, "bad magic"));
        }
        if u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) != VERSION {
            return Err(err(8, "unsupported version"));
        }
        if bytes[12] != DTYPE_F64 {
            return Err(err(12, "unsupported dtype"));
        }
        let rank = u32::from_le_bytes(bytes[13..17].try_into().expect("4 bytes")) as usize;
        let start = rank
            .checked_mul(8)
            .and_then(|r| r.checked_add(17))
            .filter(|&s| s <= bytes.len())
            .ok_or_else(|| err(17, "truncated dimensions"))?;
        let dims: Vec<usize> = bytes[17..start]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| err(17, "dimension product overflows"))?;
        if (bytes.len() - start) / 8 != count || (bytes.len() - start) % 8 != 0 {
            return Err(err(start, "payload size does not match dimensions"));
        }
        let values = bytes[start..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(FlatArray { dims, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FlatArray::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes `<stem>.inputs.bin` and `<stem>.targets.bin` into `dir`. Class
/// targets are stored as `f64` values of shape `(count,)`.
pub fn export_dataset(ds: &LabeledDataset, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (b, n, c) = ds.inputs.shape();
    FlatArray::new(vec![b, n, c], ds.inputs.values().to_vec())?
        .save(dir.join(format!("{stem}.inputs.bin")))?;
    let targets = match &ds.targets {
        Targets::Classes(c) => FlatArray::new(vec![c.len()], c.iter().map(|&v| v as f64).collect())?,
        Targets::Real(r) => {
            let (b, n, c) = r.shape();
            FlatArray::new(vec![b, n, c], r.values().to_vec())?
        }
    };
    targets.save(dir.join(format!("{stem}.targets.bin")))
}
