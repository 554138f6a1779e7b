//! Embeddings exported from a pretrained vision-language checkpoint.
//!
//! Running the checkpoint itself is out of scope for this crate. An
//! exporter writes `<root>/<model_id>/descriptor.json` plus an embedding
//! cache shard (see [`super::cache`]) keyed by the SHA-256 of each image
//! file and each UTF-8 text. Looking up anything that was not exported is
//! an error.

use std::path::Path;

use serde::Deserialize;

use super::backend::{BackendKind, Encoder};
use super::cache::{model_dir_name, CacheKey, EmbeddingCache};
use super::vector::Source;
use crate::hashing::sha256_hex;
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
struct ExportDescriptor {
    model_id: String,
    d: usize,
    #[serde(default)]
    preprocessing: Option<String>,
}

#[derive(Debug)]
pub struct PrecomputedEncoder {
    model_id: String,
    dim: usize,
    preprocessing: String,
    store: EmbeddingCache,
}

impl PrecomputedEncoder {
    pub fn open(root: &Path, model_id: &str) -> Result<Self> {
        let desc_path = root.join(model_dir_name(model_id)).join("descriptor.json");
        let text = std::fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
        let desc: ExportDescriptor = serde_json::from_str(&text)?;
        if desc.model_id != model_id || desc.d == 0 {
            return Err(Error::Config(format!(
                "{} describes {:?} (d={}), expected {model_id:?}",
                desc_path.display(),
                desc.model_id,
                desc.d
            )));
        }
        Ok(PrecomputedEncoder {
            model_id: desc.model_id,
            dim: desc.d,
            preprocessing: desc.preprocessing.unwrap_or_else(|| "native".into()),
            store: EmbeddingCache::open(root, model_id)?,
        })
    }

    fn lookup(&self, source: Source, content: &[u8]) -> Result<Vec<f64>> {
        let key = CacheKey {
            model_id: self.model_id.clone(),
            content_hash: sha256_hex(content),
            source,
        };
        let v = self.store.get(&key).ok_or_else(|| {
            Error::Encoder(format!(
                "no exported {} embedding for content {} under model {:?}",
                source.as_str(),
                key.content_hash,
                self.model_id
            ))
        })?;
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        Ok(v.to_f64())
    }
}

impl Encoder for PrecomputedEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> BackendKind {
        BackendKind::PretrainedVlm
    }
    fn encode_image(&self, bytes: &[u8]) -> Result<Vec<f64>> {
        self.lookup(Source::Image, bytes)
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.lookup(Source::Text, text.as_bytes())
    }
    fn preprocessing(&self) -> String {
        self.preprocessing.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingVector;

    #[test]
    fn serves_exported_vectors_only() {
        let dir = tempfile::tempdir().unwrap();
        let id = "openai/clip-vit-large-patch14-336";
        let shard = EmbeddingCache::open(dir.path(), id).unwrap();
        let key = CacheKey {
            model_id: id.into(),
            content_hash: sha256_hex(b"img"),
            source: Source::Image,
        };
        shard
            .put(&key, &EmbeddingVector::new(vec![1.0, 2.0, 3.0], Source::Image, id))
            .unwrap();
        std::fs::write(
            dir.path().join(model_dir_name(id)).join("descriptor.json"),
            format!(r#"{{"model_id":"{id}","d":3}}"#),
        )
        .unwrap();
        let enc = PrecomputedEncoder::open(dir.path(), id).unwrap();
        assert_eq!(enc.encode_image(b"img").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(enc.encode_image(b"other").is_err());
        assert!(enc.encode_text("img").is_err());
        assert_eq!(enc.kind(), BackendKind::PretrainedVlm);
    }
}
