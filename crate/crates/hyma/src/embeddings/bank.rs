//! Embedding-bank file format (bit-exact):
//! magic "EMB1" | u32 LE count | u32 LE dim | count·dim f32 LE, row-major.
//!
//! Banks store f32 on disk and are promoted to f64 in memory; the promotion
//! is exact, so read(write(x)) round-trips bit-exactly for f32 payloads.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EMB1";

/// In-memory embedding bank (count × dim, row-major f64).
#[derive(Debug, Clone, PartialEq)]
pub struct Bank {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Bank {
    pub fn new(count: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if count * dim != data.len() {
            return Err(Error::Dimension(format!(
                "bank {count}x{dim} needs {} values, got {}",
                count * dim,
                data.len()
            )));
        }
        Ok(Bank { count, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn write_bank(path: &Path, bank: &Bank) -> Result<()> {
    if bank.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("bank contains non-finite values".into()));
    }
    let mut bytes = Vec::with_capacity(12 + bank.data.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(bank.count as u32).to_le_bytes());
    bytes.extend_from_slice(&(bank.dim as u32).to_le_bytes());
    for v in &bank.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_bank(path: &Path) -> Result<Bank> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: 0,
            message: "file shorter than magic".into(),
        });
    }
    if &bytes[..4] != MAGIC {
        if bytes[..3] == *b"EMB" {
            return Err(Error::UnsupportedVersion(
                String::from_utf8_lossy(&bytes[..4]).into_owned(),
            ));
        }
        return Err(Error::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Format {
            offset: 4,
            message: "truncated header".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = count * dim * 4;
    let payload = &bytes[12..];
    if payload.len() != expected {
        return Err(Error::Format {
            offset: 12,
            message: format!(
                "payload is {} bytes, header {count}x{dim} needs {expected}",
                payload.len()
            ),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Bank::new(count, dim, data)
}
