//! Versioned binary container for dense `f32` matrices.
//!
//! A 32-byte header (`GISTMAT\0`, version u32, matrix count u32, 16 reserved
//! bytes) is followed by each matrix as `rows u32, cols u32` and its
//! row-major little-endian `f32` payload.

use std::fs;
use std::path::Path;

use crate::linalg::Matrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GISTMAT\0";
pub const VERSION: u32 = 1;

pub fn encode(mats: &[&Matrix]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mats.len() as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 16]);
    for m in mats {
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for x in &m.data {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Matrix>> {
    let bad = |m: &str| Error::invalid(format!("matrix file: {m}"));
    if bytes.len() < 32 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated"))
    };
    let version = u32_at(8)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32_at(12)? as usize;
    let mut pos = 32;
    let mut mats = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = u32_at(pos)? as usize;
        let cols = u32_at(pos + 4)? as usize;
        pos += 8;
        let len = rows * cols * 4;
        let payload = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated payload"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        mats.push(Matrix { rows, cols, data });
        pos += len;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(mats)
}

pub fn write(path: &Path, mats: &[&Matrix]) -> Result<()> {
    fs::write(path, encode(mats)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Matrix>> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
