//! Persistent embedding cache.
//!
//! Layout under the cache root: `<model_id>/vectors.bin` and
//! `<model_id>/index.jsonl`. `vectors.bin` starts with a 32-byte header
//!
//! | bytes  | field                          |
//! |--------|--------------------------------|
//! | 0..8   | magic `GISTEMB\0`              |
//! | 8..12  | format version (u32 LE, = 1)   |
//! | 12..16 | dimension `d` (u32 LE)         |
//! | 16..20 | dtype code (u32 LE, 1 = f32)   |
//! | 20..24 | reserved, zero                 |
//! | 24..32 | record count (u64 LE)          |
//!
//! followed by `count` contiguous records of `d` little-endian f32 values.
//! Each index line maps a key to the byte offset of its record.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::vector::{EmbeddingVector, Source};
use crate::hashing::sha256_hex;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GISTEMB\0";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: u64 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub model_id: String,
    pub content_hash: String,
    pub source: Source,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    model_id: String,
    content_hash: String,
    source: Source,
    offset: u64,
    checksum: String,
    #[serde(default)]
    normalized: bool,
}

#[derive(Debug, Default)]
struct Shard {
    dim: Option<usize>,
    count: u64,
    entries: HashMap<(String, Source), IndexEntry>,
    header_ok: bool,
}

/// One cache shard: all vectors for a single `model_id`.
#[derive(Debug)]
pub struct EmbeddingCache {
    model_id: String,
    dir: PathBuf,
    shard: RwLock<Shard>,
}

/// Directory name for a model id; path separators are not allowed in it.
pub fn model_dir_name(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c == '/' || c == '\\' || c == ':' { '_' } else { c })
        .collect()
}

fn record_checksum(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

fn encode_record(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl EmbeddingCache {
    pub fn open(root: impl AsRef<Path>, model_id: &str) -> Result<Self> {
        let dir = root.as_ref().join(model_dir_name(model_id));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let cache = EmbeddingCache {
            model_id: model_id.to_string(),
            dir,
            shard: RwLock::new(Shard::default()),
        };
        cache.reload()?;
        Ok(cache)
    }

    pub fn vectors_path(&self) -> PathBuf {
        self.dir.join("vectors.bin")
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join("index.jsonl")
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn len(&self) -> usize {
        self.shard.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn reload(&self) -> Result<()> {
        let mut shard = Shard::default();
        let vpath = self.vectors_path();
        if vpath.exists() {
            let mut header = [0u8; HEADER_LEN as usize];
            let mut f = File::open(&vpath).map_err(|e| Error::io(&vpath, e))?;
            match f.read_exact(&mut header) {
                Ok(()) => match parse_header(&header) {
                    Some((d, count)) => {
                        shard.dim = Some(d);
                        shard.count = count;
                        shard.header_ok = true;
                    }
                    None => log::warn!("{}: bad header, cache disabled", vpath.display()),
                },
                Err(_) => log::warn!("{}: truncated header, cache disabled", vpath.display()),
            }
        } else {
            shard.header_ok = true;
        }
        let ipath = self.index_path();
        if ipath.exists() && shard.header_ok {
            let f = File::open(&ipath).map_err(|e| Error::io(&ipath, e))?;
            for (lineno, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&ipath, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<IndexEntry>(&line) {
                    Ok(entry) if entry.model_id == self.model_id => {
                        shard
                            .entries
                            .entry((entry.content_hash.clone(), entry.source))
                            .or_insert(entry);
                    }
                    Ok(_) => log::warn!("{}:{}: foreign model id", ipath.display(), lineno + 1),
                    Err(e) => log::warn!("{}:{}: skipping entry: {e}", ipath.display(), lineno + 1),
                }
            }
        }
        *self.shard.write().unwrap() = shard;
        Ok(())
    }

    fn check_key(&self, key: &CacheKey) -> Result<()> {
        if key.model_id != self.model_id {
            return Err(Error::Cache(format!(
                "key for model {:?} used on shard {:?}",
                key.model_id, self.model_id
            )));
        }
        Ok(())
    }

    /// Looks up a vector. Corrupted or unreadable entries are reported as misses.
    pub fn get(&self, key: &CacheKey) -> Option<EmbeddingVector> {
        if self.check_key(key).is_err() {
            return None;
        }
        let shard = self.shard.read().unwrap();
        let entry = shard.entries.get(&(key.content_hash.clone(), key.source))?;
        let d = shard.dim?;
        match self.read_record(entry, d) {
            Ok(values) => Some(EmbeddingVector {
                values,
                normalized: entry.normalized,
                source: key.source,
                model_id: self.model_id.clone(),
            }),
            Err(e) => {
                log::warn!("embedding cache miss on corrupted entry {}: {e}", key.content_hash);
                None
            }
        }
    }

    fn read_record(&self, entry: &IndexEntry, d: usize) -> Result<Vec<f32>> {
        let path = self.vectors_path();
        let mut f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut buf = vec![0u8; d * 4];
        f.seek(SeekFrom::Start(entry.offset))
            .and_then(|_| f.read_exact(&mut buf))
            .map_err(|e| Error::io(&path, e))?;
        if record_checksum(&buf) != entry.checksum {
            return Err(Error::Cache("checksum mismatch".into()));
        }
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Stores a vector. Keys are write-once: storing an identical value again
    /// is a no-op, storing a different value is an error.
    pub fn put(&self, key: &CacheKey, vector: &EmbeddingVector) -> Result<()> {
        self.check_key(key)?;
        if vector.values.is_empty() {
            return Err(Error::Cache("empty vector".into()));
        }
        let mut shard = self.shard.write().unwrap();
        if !shard.header_ok {
            return Err(Error::Cache(format!(
                "{} has a corrupted header",
                self.vectors_path().display()
            )));
        }
        let d = vector.dim();
        if let Some(expected) = shard.dim {
            if expected != d {
                return Err(Error::DimensionMismatch { expected, actual: d });
            }
        }
        let bytes = encode_record(&vector.values);
        let checksum = record_checksum(&bytes);
        if let Some(existing) = shard.entries.get(&(key.content_hash.clone(), key.source)) {
            if existing.checksum == checksum {
                return Ok(());
            }
            // A prior entry may be corrupted on disk; only a readable one is authoritative.
            if self.read_record(existing, d).is_ok() {
                return Err(Error::Cache(format!(
                    "conflicting value for existing key {}",
                    key.content_hash
                )));
            }
        }

        let vpath = self.vectors_path();
        let mut f = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&vpath)
            .map_err(|e| Error::io(&vpath, e))?;
        let offset = HEADER_LEN + shard.count * (d as u64) * 4;
        let io = |e| Error::io(&vpath, e);
        f.seek(SeekFrom::Start(offset)).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        let count = shard.count + 1;
        f.seek(SeekFrom::Start(0)).map_err(io)?;
        f.write_all(&header_bytes(d, count)).map_err(io)?;
        f.sync_data().map_err(io)?;

        let entry = IndexEntry {
            model_id: self.model_id.clone(),
            content_hash: key.content_hash.clone(),
            source: key.source,
            offset,
            checksum,
            normalized: vector.normalized,
        };
        let ipath = self.index_path();
        let mut idx = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&ipath)
            .map_err(|e| Error::io(&ipath, e))?;
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        idx.write_all(line.as_bytes()).map_err(|e| Error::io(&ipath, e))?;

        shard.dim = Some(d);
        shard.count = count;
        shard
            .entries
            .insert((key.content_hash.clone(), key.source), entry);
        Ok(())
    }
}

pub fn header_bytes(d: usize, count: u64) -> [u8; HEADER_LEN as usize] {
    let mut h = [0u8; HEADER_LEN as usize];
    h[0..8].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[12..16].copy_from_slice(&(d as u32).to_le_bytes());
    h[16..20].copy_from_slice(&DTYPE_F32.to_le_bytes());
    h[24..32].copy_from_slice(&count.to_le_bytes());
    h
}

fn parse_header(h: &[u8; HEADER_LEN as usize]) -> Option<(usize, u64)> {
    if &h[0..8] != MAGIC {
        return None;
    }
    let version = u32::from_le_bytes(h[8..12].try_into().unwrap());
    let d = u32::from_le_bytes(h[12..16].try_into().unwrap());
    let dtype = u32::from_le_bytes(h[16..20].try_into().unwrap());
    let count = u64::from_le_bytes(h[24..32].try_into().unwrap());
    (version == FORMAT_VERSION && dtype == DTYPE_F32 && d > 0).then_some((d as usize, count))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(h: &str) -> CacheKey {
        CacheKey {
            model_id: "m/x".into(),
            content_hash: h.into(),
            source: Source::Image,
        }
    }

    fn vec3(a: f32) -> EmbeddingVector {
        EmbeddingVector::new(vec![a, -0.0, f32::MIN_POSITIVE], Source::Image, "m/x")
    }

    #[test]
    fn put_get_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "m/x").unwrap();
        let v = vec3(0.1);
        cache.put(&key("a"), &v).unwrap();
        let got = cache.get(&key("a")).unwrap();
        let bits = |v: &EmbeddingVector| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&got), bits(&v));
        // survives reopen
        let cache = EmbeddingCache::open(dir.path(), "m/x").unwrap();
        assert_eq!(bits(&cache.get(&key("a")).unwrap()), bits(&v));
        assert!(dir.path().join("m_x/vectors.bin").exists());
    }

    #[test]
    fn absent_key_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "m/x").unwrap();
        assert!(cache.get(&key("nope")).is_none());
    }

    #[test]
    fn identical_put_stores_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "m/x").unwrap();
        cache.put(&key("a"), &vec3(1.0)).unwrap();
        cache.put(&key("a"), &vec3(1.0)).unwrap();
        let index = fs::read_to_string(cache.index_path()).unwrap();
        assert_eq!(index.lines().count(), 1);
        let len = fs::metadata(cache.vectors_path()).unwrap().len();
        assert_eq!(len, HEADER_LEN + 12);
        assert!(cache.put(&key("a"), &vec3(2.0)).is_err());
    }

    #[test]
    fn corrupted_record_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "m/x").unwrap();
        cache.put(&key("a"), &vec3(1.0)).unwrap();
        let mut bytes = fs::read(cache.vectors_path()).unwrap();
        bytes[HEADER_LEN as usize] ^= 0xff;
        fs::write(cache.vectors_path(), bytes).unwrap();
        assert!(cache.get(&key("a")).is_none());
    }

    #[test]
    fn garbage_index_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path(), "m/x").unwrap();
        cache.put(&key("a"), &vec3(1.0)).unwrap();
        let mut idx = OpenOptions::new().append(true).open(cache.index_path()).unwrap();
        idx.write_all(b"{not json\n").unwrap();
        let cache = EmbeddingCache::open(dir.path(), "m/x").unwrap();
        assert!(cache.get(&key("a")).is_some());
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn header_layout() {
        let h = header_bytes(16, 3);
        assert_eq!(&h[..8], MAGIC);
        assert_eq!(parse_header(&h), Some((16, 3)));
    }
}
