//! Deterministic encoders that need no weights.
//!
//! * [`HashEncoder`]: every input maps to the seeded hash expansion of its
//!   bytes. No semantic structure at all.
//! * [`ConceptEncoder`]: a bag-of-concepts model. Each word has a fixed
//!   pseudo-random direction; a text embeds as the mean of its word
//!   directions. Images in the [`SyntheticImage`] format embed as the mean
//!   of their depicted concepts plus a nuisance component confined to a
//!   fixed low-rank subspace, so images and captions that mention the same
//!   concepts are correlated the way a pretrained vision-language model's
//!   would be. Any other file falls back to the hash expansion.

use std::fmt;

use super::backend::{BackendKind, Encoder};
use crate::hashing::hash_expand;
use crate::{Error, Result};

pub const DEFAULT_HASH_DIM: usize = 16;
pub const DEFAULT_CONCEPT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
pub const CONTEXT_LIMIT: usize = 77;

#[derive(Debug, Clone)]
pub struct HashEncoder {
    model_id: String,
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEncoder {
            model_id: format!("synthetic-hash-{dim}"),
            dim,
            seed,
        }
    }
}

impl Encoder for HashEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Synthetic
    }
    fn encode_image(&self, bytes: &[u8]) -> Result<Vec<f64>> {
        if bytes.is_empty() {
            return Err(Error::Encoder("empty image file".into()));
        }
        Ok(hash_expand(self.seed, bytes, self.dim))
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(hash_expand(self.seed, text.as_bytes(), self.dim))
    }
}

/// Words carrying no visual content; the concept model ignores them.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "for", "from", "has", "have", "in",
    "is", "it", "its", "like", "look", "looks", "might", "of", "on", "or", "photo", "picture",
    "that", "the", "this", "to", "what", "with", "would",
];

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|w| w.trim_matches('-').to_lowercase())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Synthetic image file: a text header followed by `key: value` lines.
///
/// ```text
/// GISTSYN1
/// concepts: mottled red reticular back
/// nuisance: 1.5
/// instance: 1234
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub concepts: Vec<String>,
    pub nuisance: f64,
    pub instance: u64,
}

pub const SYNTHETIC_IMAGE_MAGIC: &str = "GISTSYN1";

impl SyntheticImage {
    pub fn to_bytes(&self) -> Vec<u8> {
        format!(
            "{SYNTHETIC_IMAGE_MAGIC}\nconcepts: {}\nnuisance: {}\ninstance: {}\n",
            self.concepts.join(" "),
            self.nuisance,
            self.instance
        )
        .into_bytes()
    }

    /// `Ok(None)` when the bytes are not a synthetic image at all.
    pub fn parse(bytes: &[u8]) -> Result<Option<Self>> {
        let Some(rest) = bytes.strip_prefix(SYNTHETIC_IMAGE_MAGIC.as_bytes()) else {
            return Ok(None);
        };
        let text = std::str::from_utf8(rest)
            .map_err(|_| Error::Encoder("synthetic image is not UTF-8".into()))?;
        let mut img = SyntheticImage {
            concepts: Vec::new(),
            nuisance: 0.0,
            instance: 0,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Encoder(format!("malformed line {line:?}")))?;
            let v = v.trim();
            let bad = || Error::Encoder(format!("bad value for {k}: {v:?}"));
            match k.trim() {
                "concepts" => img.concepts = v.split_whitespace().map(str::to_string).collect(),
                "nuisance" => img.nuisance = v.parse().map_err(|_| bad())?,
                "instance" => img.instance = v.parse().map_err(|_| bad())?,
                other => return Err(Error::Encoder(format!("unknown field {other:?}"))),
            }
        }
        if img.concepts.is_empty() {
            return Err(Error::Encoder("synthetic image depicts no concepts".into()));
        }
        Ok(Some(img))
    }
}

#[derive(Clone)]
pub struct ConceptEncoder {
    model_id: String,
    dim: usize,
    seed: u64,
    nuisance_basis: Vec<Vec<f64>>,
}

impl fmt::Debug for ConceptEncoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConceptEncoder")
            .field("model_id", &self.model_id)
            .field("dim", &self.dim)
            .finish()
    }
}

impl ConceptEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let rank = (dim / 4).max(1);
        let nuisance_basis = (0..rank)
            .map(|k| unit(hash_expand(seed, format!("basis:{k}").as_bytes(), dim)))
            .collect();
        ConceptEncoder {
            model_id: format!("synthetic-concept-{dim}"),
            dim,
            seed,
            nuisance_basis,
        }
    }

    pub fn word_vector(&self, word: &str) -> Vec<f64> {
        let scale = (3.0 / self.dim as f64).sqrt();
        hash_expand(self.seed, format!("w:{word}").as_bytes(), self.dim)
            .into_iter()
            .map(|x| x * scale)
            .collect()
    }

    fn mean_of_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for w in words {
            for (a, x) in acc.iter_mut().zip(self.word_vector(w.as_ref())) {
                *a += x;
            }
        }
        let n = words.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn nuisance_rank(&self) -> usize {
        self.nuisance_basis.len()
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = crate::linalg::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

impl Encoder for ConceptEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Synthetic
    }

    fn encode_image(&self, bytes: &[u8]) -> Result<Vec<f64>> {
        if bytes.is_empty() {
            return Err(Error::Encoder("empty image file".into()));
        }
        let Some(img) = SyntheticImage::parse(bytes)? else {
            return Ok(hash_expand(self.seed, bytes, self.dim));
        };
        let words: Vec<String> = img.concepts.iter().map(|c| c.to_lowercase()).collect();
        let mut v = self.mean_of_words(&words);
        if img.nuisance != 0.0 {
            // unit-variance coefficients inside the nuisance subspace
            let coeffs = hash_expand(
                self.seed,
                format!("nuisance:{}", img.instance).as_bytes(),
                self.nuisance_basis.len(),
            );
            for (c, basis) in coeffs.iter().zip(&self.nuisance_basis) {
                let c = c * 3f64.sqrt() * img.nuisance;
                for (x, b) in v.iter_mut().zip(basis) {
                    *x += c * b;
                }
            }
        }
        Ok(v)
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            return Ok(hash_expand(self.seed, text.as_bytes(), self.dim));
        }
        if tokens.len() > CONTEXT_LIMIT {
            log::warn!(
                "text truncated from {} to {CONTEXT_LIMIT} tokens: {:.40}...",
                tokens.len(),
                text
            );
            tokens.truncate(CONTEXT_LIMIT);
        }
        Ok(self.mean_of_words(&tokens))
    }

    fn preprocessing(&self) -> String {
        format!("concept-bag, context {CONTEXT_LIMIT} tokens")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm};

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (norm(a) * norm(b))
    }

    #[test]
    fn hash_encoder_is_hash_expansion() {
        let enc = HashEncoder::new(16, 5);
        let v = enc.encode_image(b"\x89PNG....").unwrap();
        assert_eq!(v, hash_expand(5, b"\x89PNG....", 16));
        assert_eq!(v.len(), 16);
    }

    #[test]
    fn tokenizer_drops_stopwords_and_punctuation() {
        assert_eq!(
            tokenize("A photo of a 747-100, with T-tail."),
            vec!["747-100", "t-tail"]
        );
    }

    #[test]
    fn synthetic_image_round_trip() {
        let img = SyntheticImage {
            concepts: vec!["red".into(), "mottled".into()],
            nuisance: 1.25,
            instance: 42,
        };
        assert_eq!(SyntheticImage::parse(&img.to_bytes()).unwrap(), Some(img));
        assert_eq!(SyntheticImage::parse(b"JFIF").unwrap(), None);
        assert!(SyntheticImage::parse(b"GISTSYN1\nconcepts: \n").is_err());
    }

    #[test]
    fn concept_images_align_with_matching_text() {
        let enc = ConceptEncoder::new(64, DEFAULT_SEED);
        let img = SyntheticImage {
            concepts: vec!["mottled".into(), "reticular".into(), "back".into()],
            nuisance: 0.0,
            instance: 1,
        };
        let iv = enc.encode_image(&img.to_bytes()).unwrap();
        let same = enc.encode_text("Mottled, reticular pattern on the back").unwrap();
        let other = enc.encode_text("yellow scaly plaques on the scalp").unwrap();
        assert!(cos(&iv, &same) > 0.6);
        assert!(cos(&iv, &other) < cos(&iv, &same));
    }

    #[test]
    fn nuisance_stays_in_its_subspace() {
        let enc = ConceptEncoder::new(32, 1);
        let mk = |instance| SyntheticImage {
            concepts: vec!["x".into()],
            nuisance: 2.0,
            instance,
        };
        let a = enc.encode_image(&mk(1).to_bytes()).unwrap();
        let b = enc.encode_image(&mk(2).to_bytes()).unwrap();
        assert_ne!(a, b);
        // difference lies in the span of the basis: its residual after
        // projection onto the (not necessarily orthogonal) basis is ~0
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mut resid = diff.clone();
        // Gram-Schmidt over the basis
        let mut ortho: Vec<Vec<f64>> = Vec::new();
        for b in &enc.nuisance_basis {
            let mut v = b.clone();
            for q in &ortho {
                let p = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
            }
            ortho.push(unit(v));
        }
        for q in &ortho {
            let p = dot(&resid, q);
            resid.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
        }
        assert!(norm(&resid) < 1e-9 * norm(&diff).max(1.0));
    }
}
