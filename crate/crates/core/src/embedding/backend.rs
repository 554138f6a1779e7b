use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{CacheKey, EmbeddingCache};
use super::pretrained::PrecomputedEncoder;
use super::synthetic::{ConceptEncoder, HashEncoder, DEFAULT_CONCEPT_DIM, DEFAULT_HASH_DIM, DEFAULT_SEED};
use super::vector::{EmbeddingVector, Source};
use crate::data::ImageRecord;
use crate::hashing::{canonical_hash, sha256_hex};
use crate::linalg::Matrix;
use crate::{matfile, Error, Result};

/// Env var naming the directory holding exported pretrained embeddings.
pub const MODEL_DIR_ENV: &str = "GIST_MODEL_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    PretrainedVlm,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub model_id: String,
    pub d: usize,
    pub trainable: bool,
    pub kind: BackendKind,
    pub preprocessing: String,
}

/// A frozen base encoder pair `f_I`, `f_T`.
pub trait Encoder: Send + Sync + fmt::Debug {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn kind(&self) -> BackendKind;
    fn encode_image(&self, bytes: &[u8]) -> Result<Vec<f64>>;
    fn encode_text(&self, text: &str) -> Result<Vec<f64>>;
    fn preprocessing(&self) -> String {
        "native".to_string()
    }
}

/// Linear projection heads on top of the frozen encoders. These are the
/// trainable parameters during fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHeads {
    pub image: Matrix,
    pub text: Matrix,
    pub logit_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct HeadsMeta {
    format: String,
    base_model_id: String,
    logit_scale: f64,
    weights_sha256: String,
}

impl ProjectionHeads {
    pub fn identity(d: usize, logit_scale: f64) -> Self {
        ProjectionHeads {
            image: Matrix::identity(d),
            text: Matrix::identity(d),
            logit_scale,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.image.rows
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(&matfile::encode(&[&self.image, &self.text]))
    }

    /// Writes `<stem>.bin` (matrices) and `<stem>.json` (metadata).
    pub fn save(&self, stem: &Path, base_model_id: &str) -> Result<()> {
        let bin = stem.with_extension("bin");
        let bytes = matfile::encode(&[&self.image, &self.text]);
        std::fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
        let meta = HeadsMeta {
            format: "gist-projection-heads/1".into(),
            base_model_id: base_model_id.into(),
            logit_scale: self.logit_scale,
            weights_sha256: sha256_hex(&bytes),
        };
        let json = stem.with_extension("json");
        std::fs::write(&json, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&json, e))
    }

    /// Returns the heads and the base model id they were trained on.
    pub fn load(stem: &Path) -> Result<(Self, String)> {
        let json = stem.with_extension("json");
        let meta: HeadsMeta = serde_json::from_str(
            &std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?,
        )?;
        let mut mats = matfile::read(&stem.with_extension("bin"))?;
        if mats.len() != 2 || mats[0].cols != mats[1].cols {
            return Err(Error::invalid("projection heads file must hold two matrices"));
        }
        let text = mats.pop().unwrap();
        let image = mats.pop().unwrap();
        Ok((
            ProjectionHeads {
                image,
                text,
                logit_scale: meta.logit_scale,
            },
            meta.base_model_id,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct Backend {
    encoder: Arc<dyn Encoder>,
    heads: Option<ProjectionHeads>,
    cache: Option<Arc<EmbeddingCache>>,
}

fn round_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

impl Backend {
    pub fn from_encoder(encoder: Arc<dyn Encoder>) -> Self {
        Backend {
            encoder,
            heads: None,
            cache: None,
        }
    }

    /// Resolves a model id:
    ///
    /// * `synthetic` / `synthetic-hash-<d>`: [`HashEncoder`]
    /// * `synthetic-concept` / `synthetic-concept-<d>`: [`ConceptEncoder`]
    /// * anything else: exported pretrained embeddings under `$GIST_MODEL_DIR`
    pub fn open(model_id: &str) -> Result<Self> {
        let dim_suffix = |prefix: &str, default: usize| -> Result<Option<usize>> {
            if model_id == prefix {
                return Ok(Some(default));
            }
            match model_id.strip_prefix(prefix).and_then(|s| s.strip_prefix('-')) {
                Some(d) => d
                    .parse()
                    .ok()
                    .filter(|&d: &usize| d > 0)
                    .map(Some)
                    .ok_or_else(|| Error::Config(format!("bad dimension in model id {model_id:?}"))),
                None => Ok(None),
            }
        };
        if model_id == "synthetic" {
            return Ok(Self::from_encoder(Arc::new(HashEncoder::new(DEFAULT_HASH_DIM, DEFAULT_SEED))));
        }
        if let Some(d) = dim_suffix("synthetic-hash", DEFAULT_HASH_DIM)? {
            return Ok(Self::from_encoder(Arc::new(HashEncoder::new(d, DEFAULT_SEED))));
        }
        if let Some(d) = dim_suffix("synthetic-concept", DEFAULT_CONCEPT_DIM)? {
            return Ok(Self::from_encoder(Arc::new(ConceptEncoder::new(d, DEFAULT_SEED))));
        }
        let root = std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::Config(format!("{MODEL_DIR_ENV} is not set; cannot load {model_id:?}"))
        })?;
        Ok(Self::from_encoder(Arc::new(PrecomputedEncoder::open(&root, model_id)?)))
    }

    pub fn with_cache(mut self, root: &Path) -> Result<Self> {
        self.cache = Some(Arc::new(EmbeddingCache::open(root, self.encoder.model_id())?));
        Ok(self)
    }

    pub fn with_heads(mut self, heads: ProjectionHeads) -> Result<Self> {
        let d = self.encoder.dim();
        if heads.image.cols != d || heads.text.cols != d || heads.image.rows != heads.text.rows {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: heads.image.cols,
            });
        }
        self.heads = Some(heads);
        Ok(self)
    }

    /// Same encoders with identity heads: the starting point for fine-tuning.
    pub fn trainable(self, logit_scale: f64) -> Result<Self> {
        let d = self.encoder.dim();
        self.with_heads(ProjectionHeads::identity(d, logit_scale))
    }

    pub fn frozen(&self) -> Self {
        Backend {
            encoder: self.encoder.clone(),
            heads: None,
            cache: self.cache.clone(),
        }
    }

    pub fn heads(&self) -> Option<&ProjectionHeads> {
        self.heads.as_ref()
    }

    pub fn base_model_id(&self) -> &str {
        self.encoder.model_id()
    }

    pub fn base_dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        let (model_id, d) = match &self.heads {
            Some(h) => (
                format!("{}+heads-{}", self.encoder.model_id(), &h.fingerprint()[..12]),
                h.out_dim(),
            ),
            None => (self.encoder.model_id().to_string(), self.encoder.dim()),
        };
        BackendDescriptor {
            model_id,
            d,
            trainable: self.heads.is_some(),
            kind: self.encoder.kind(),
            preprocessing: self.encoder.preprocessing(),
        }
    }

    fn cached(&self, source: Source, content: &[u8], compute: impl FnOnce() -> Result<Vec<f64>>) -> Result<Vec<f64>> {
        let Some(cache) = &self.cache else {
            return compute().map(round_f32);
        };
        let key = CacheKey {
            model_id: self.encoder.model_id().to_string(),
            content_hash: sha256_hex(content),
            source,
        };
        if let Some(v) = cache.get(&key) {
            return Ok(v.to_f64());
        }
        let v = round_f32(compute()?);
        cache.put(&key, &EmbeddingVector::from_f64(&v, source, self.encoder.model_id()))?;
        Ok(v)
    }

    /// Frozen base image features, rounded to storage precision.
    pub fn base_image(&self, bytes: &[u8]) -> Result<Vec<f64>> {
        self.cached(Source::Image, bytes, || self.encoder.encode_image(bytes))
    }

    pub fn base_text(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot encode an empty text"));
        }
        self.cached(Source::Text, text.as_bytes(), || self.encoder.encode_text(text))
    }

    pub fn project_image(&self, base: &[f64]) -> Vec<f64> {
        match &self.heads {
            Some(h) => h.image.matvec(base),
            None => base.to_vec(),
        }
    }

    pub fn project_text(&self, base: &[f64]) -> Vec<f64> {
        match &self.heads {
            Some(h) => h.text.matvec(base),
            None => base.to_vec(),
        }
    }

    pub fn encode_image_bytes(&self, bytes: &[u8]) -> Result<EmbeddingVector> {
        let base = self.base_image(bytes)?;
        Ok(EmbeddingVector::from_f64(
            &self.project_image(&base),
            Source::Image,
            self.descriptor().model_id,
        ))
    }

    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let base = self.base_text(text)?;
        Ok(EmbeddingVector::from_f64(
            &self.project_text(&base),
            Source::Text,
            self.descriptor().model_id,
        ))
    }

    pub fn config_hash(&self) -> String {
        canonical_hash(&self.descriptor())
    }
}

pub fn read_image(record: &ImageRecord) -> Result<Vec<u8>> {
    std::fs::read(&record.path).map_err(|e| {
        Error::Encoder(format!("image {:?} ({}): {e}", record.image_id, record.path.display()))
    })
}

/// Encodes images in parallel; output order follows input order.
pub fn encode_images(backend: &Backend, images: &[ImageRecord]) -> Result<Vec<EmbeddingVector>> {
    images
        .par_iter()
        .map(|rec| {
            let bytes = read_image(rec)?;
            backend
                .encode_image_bytes(&bytes)
                .map_err(|e| Error::Encoder(format!("image {:?}: {e}", rec.image_id)))
        })
        .collect()
}

pub fn encode_texts<S: AsRef<str> + Sync>(backend: &Backend, texts: &[S]) -> Result<Vec<EmbeddingVector>> {
    texts
        .par_iter()
        .map(|t| backend.encode_text(t.as_ref()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::hashing::hash_expand;

    fn rec(dir: &Path, id: &str, bytes: &[u8]) -> ImageRecord {
        let path = dir.join(format!("{id}.bin"));
        std::fs::write(&path, bytes).unwrap();
        ImageRecord {
            image_id: id.into(),
            path,
            label: "x".into(),
            split: Split::Train,
        }
    }

    #[test]
    fn synthetic_image_embedding_is_rounded_hash_expansion() {
        let dir = tempfile::tempdir().unwrap();
        let b = Backend::open("synthetic").unwrap();
        let r = rec(dir.path(), "a", b"any bytes at all");
        let v = encode_images(&b, &[r.clone(), r]).unwrap();
        let expect: Vec<f32> = hash_expand(DEFAULT_SEED, b"any bytes at all", 16)
            .into_iter()
            .map(|x| x as f32)
            .collect();
        assert_eq!(v[0].values, expect);
        assert_eq!(v[0], v[1]);
        assert!(!v[0].normalized);
        assert_eq!(b.descriptor().d, 16);
    }

    #[test]
    fn empty_batch() {
        let b = Backend::open("synthetic").unwrap();
        assert!(encode_images(&b, &[]).unwrap().is_empty());
        assert!(encode_texts::<&str>(&b, &[]).unwrap().is_empty());
    }

    #[test]
    fn missing_image_names_the_id() {
        let b = Backend::open("synthetic").unwrap();
        let r = ImageRecord {
            image_id: "ghost-7".into(),
            path: "/nonexistent/ghost.png".into(),
            label: "x".into(),
            split: Split::Test,
        };
        let err = encode_images(&b, &[r]).unwrap_err().to_string();
        assert!(err.contains("ghost-7"), "{err}");
    }

    #[test]
    fn empty_text_rejected() {
        let b = Backend::open("synthetic-concept").unwrap();
        assert!(b.encode_text("").is_err());
        let v = encode_texts(&b, &vec!["red lumps on the shin"; 45]).unwrap();
        assert_eq!(v.len(), 45);
        assert!(v.iter().all(|x| x.dim() == 64 && *x == v[0]));
    }

    #[test]
    fn cached_and_uncached_agree() {
        let dir = tempfile::tempdir().unwrap();
        let plain = Backend::open("synthetic-concept-8").unwrap();
        let cached = plain.clone().with_cache(dir.path()).unwrap();
        let a = cached.encode_text("scaly plaques").unwrap();
        let b = cached.encode_text("scaly plaques").unwrap();
        let c = plain.encode_text("scaly plaques").unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values, c.values);
    }

    #[test]
    fn heads_change_model_id_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut heads = ProjectionHeads::identity(8, 1.0);
        heads.image.data[1] = 0.5;
        let b = Backend::open("synthetic-concept-8").unwrap().with_heads(heads.clone()).unwrap();
        let desc = b.descriptor();
        assert!(desc.trainable);
        assert!(desc.model_id.starts_with("synthetic-concept-8+heads-"));
        let stem = dir.path().join("heads");
        heads.save(&stem, "synthetic-concept-8").unwrap();
        let (back, base) = ProjectionHeads::load(&stem).unwrap();
        assert_eq!(back, heads);
        assert_eq!(base, "synthetic-concept-8");
    }

    #[test]
    fn open_rejects_bad_ids() {
        assert!(Backend::open("synthetic-hash-0").is_err());
        assert!(Backend::open("synthetic-concept-x").is_err());
    }
}
