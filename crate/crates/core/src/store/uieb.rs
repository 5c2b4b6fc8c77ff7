//! `UIEB` embedding blocks.
//!
//! Layout, all little-endian: magic `b"UIEB"`, `version: u32`, `n: u32`,
//! `d: u32`, then `n * d` IEEE-754 `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UIEB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Row-major `n x d` block of raw encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl EmbeddingBlock {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::InvalidArgument(format!(
                "block data has {} values, expected {}",
                data.len(),
                n * d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(d: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            n: rows.len(),
            d,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::EmbeddingFileCorrupt {
            path: path.to_owned(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4-byte slice"));
        let version = word(4);
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let (n, d) = (word(8) as usize, word(12) as usize);
        let expected = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(4))
            .and_then(|c| c.checked_add(HEADER_LEN))
            .ok_or_else(|| corrupt("shape overflows".into()))?;
        if bytes.len() != expected {
            return Err(corrupt(format!(
                "expected {expected} bytes for {n}x{d}, found {}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(Self { n, d, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::EmbeddingFileCorrupt {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Writes through a temporary sibling and renames, so readers never
    /// observe a partial file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("uieb.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
