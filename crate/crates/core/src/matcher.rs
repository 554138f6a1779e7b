//! Label-preserving caption matching: every training image gets the `n`
//! descriptions of its own class that lie closest to it in the shared
//! embedding space.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::captions::{append_class_name, CaptionStore};
use crate::data::{DatasetManifest, Split};
use crate::embedding::{encode_images, encode_texts, normalized_f64, Backend, EmbeddingVector};
use crate::linalg::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCaption {
    pub caption_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchAssignment {
    pub image_id: String,
    pub ranked: Vec<RankedCaption>,
    pub n: usize,
}

impl MatchAssignment {
    pub fn caption_ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|r| r.caption_id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionTextMode {
    Long,
    #[default]
    ShortWithClass,
}

/// Preferred `n` per dataset, from the caption-count ablation.
pub fn default_n_for(dataset: &str) -> Option<usize> {
    match dataset.to_ascii_lowercase().as_str() {
        "fitzpatrick40" => Some(3),
        "fgvc-aircraft" | "fgvc_aircraft" | "aircraft" => Some(4),
        "cub200" | "cub200-2011" => Some(1),
        "flowers102" => Some(1),
        _ => None,
    }
}

/// Candidate caption prepared for repeated scoring: unit-norm, double precision.
#[derive(Debug, Clone)]
pub struct PreparedCaption {
    pub caption_id: String,
    unit: Vec<f64>,
}

pub fn prepare_captions(class_captions: &[(String, EmbeddingVector)]) -> Result<Vec<PreparedCaption>> {
    let dim = class_captions.first().map_or(0, |(_, v)| v.dim());
    class_captions
        .iter()
        .map(|(id, v)| {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            Ok(PreparedCaption {
                caption_id: id.clone(),
                unit: normalized_f64(&v.to_f64())?,
            })
        })
        .collect()
}

fn rank_order(a: &RankedCaption, b: &RankedCaption) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.caption_id.cmp(&b.caption_id))
}

/// Top-`n` candidates by cosine similarity; ties go to the smaller caption id.
pub fn match_prepared(
    image_id: &str,
    image_emb: &EmbeddingVector,
    candidates: &[PreparedCaption],
    n: usize,
) -> Result<MatchAssignment> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid(format!("no candidate captions for image {image_id:?}")));
    }
    let dim = candidates[0].unit.len();
    if image_emb.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: image_emb.dim(),
        });
    }
    let img = normalized_f64(&image_emb.to_f64())?;
    let mut scored: Vec<RankedCaption> = candidates
        .iter()
        .map(|c| RankedCaption {
            caption_id: c.caption_id.clone(),
            score: dot(&img, &c.unit),
        })
        .collect();
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, rank_order);
        scored.truncate(n);
    }
    scored.sort_by(rank_order);
    Ok(MatchAssignment {
        image_id: image_id.to_string(),
        ranked: scored,
        n,
    })
}

pub fn match_image_to_captions(
    image_id: &str,
    image_emb: &EmbeddingVector,
    class_captions: &[(String, EmbeddingVector)],
    n: usize,
) -> Result<MatchAssignment> {
    match_prepared(image_id, image_emb, &prepare_captions(class_captions)?, n)
}

/// Matches every training image against its own class's captions. Output
/// follows manifest order. Validation and test images are never matched.
pub fn match_training_images(
    manifest: &DatasetManifest,
    store: &CaptionStore,
    backend: &Backend,
    n: usize,
) -> Result<Vec<MatchAssignment>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let train: Vec<_> = manifest.split(Split::Train).cloned().collect();
    let by_label = store.by_label();
    let mut prepared: BTreeMap<&str, Vec<PreparedCaption>> = BTreeMap::new();
    for label in train.iter().map(|r| r.label.as_str()).collect::<BTreeSet<_>>() {
        let caps = by_label
            .get(label)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::NoCaptions(label.to_string()))?;
        let texts: Vec<&str> = caps.iter().map(|c| c.long_text.as_str()).collect();
        let embs = encode_texts(backend, &texts)?;
        let pairs: Vec<(String, EmbeddingVector)> = caps
            .iter()
            .map(|c| c.caption_id.clone())
            .zip(embs)
            .collect();
        prepared.insert(label, prepare_captions(&pairs)?);
    }
    let image_embs = encode_images(backend, &train)?;
    train
        .par_iter()
        .zip(image_embs.par_iter())
        .map(|(rec, emb)| match_prepared(&rec.image_id, emb, &prepared[rec.label.as_str()], n))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedImage {
    pub image_id: String,
    pub label: String,
    pub path: PathBuf,
    /// Matched caption ids, best first.
    pub captions: Vec<String>,
}

/// Fine-tuning pairs: each training image with its matched captions and the
/// exact text that will be fed to the text encoder for each caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDataset {
    pub caption_text_mode: CaptionTextMode,
    pub images: Vec<PairedImage>,
    pub texts: BTreeMap<String, String>,
    pub caption_labels: BTreeMap<String, String>,
}

impl PairDataset {
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.images
            .iter()
            .flat_map(|img| img.captions.iter().map(move |c| (img.image_id.as_str(), c.as_str())))
    }

    pub fn len(&self) -> usize {
        self.images.iter().map(|i| i.captions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairs whose caption label differs from the image label.
    pub fn label_violations(&self) -> Vec<(String, String)> {
        self.images
            .iter()
            .flat_map(|img| {
                img.captions
                    .iter()
                    .filter(|c| self.caption_labels.get(*c) != Some(&img.label))
                    .map(|c| (img.image_id.clone(), c.clone()))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Text used for fine-tuning: the summary (or, for class-name-only
/// captions, the caption itself) with the class name appended.
pub fn training_text(store: &CaptionStore, caption_id: &str, mode: CaptionTextMode) -> Result<String> {
    let rec = store
        .get(caption_id)
        .ok_or_else(|| Error::invalid(format!("unknown caption {caption_id:?}")))?;
    let base = match mode {
        CaptionTextMode::Long => &rec.long_text,
        CaptionTextMode::ShortWithClass if rec.is_flyp() => &rec.long_text,
        CaptionTextMode::ShortWithClass => rec
            .short_text
            .as_ref()
            .ok_or_else(|| Error::MissingSummary(caption_id.to_string()))?,
    };
    if rec.is_flyp() {
        return Ok(base.clone());
    }
    Ok(append_class_name(base, &rec.label))
}

pub fn assemble_pairs(
    manifest: &DatasetManifest,
    store: &CaptionStore,
    matches: &[MatchAssignment],
    mode: CaptionTextMode,
) -> Result<PairDataset> {
    let mut images = Vec::with_capacity(matches.len());
    let mut texts = BTreeMap::new();
    let mut caption_labels = BTreeMap::new();
    for m in matches {
        let rec = manifest
            .get(&m.image_id)
            .ok_or_else(|| Error::UnknownImage(m.image_id.clone()))?;
        if rec.split != Split::Train {
            return Err(Error::invalid(format!("image {:?} is not a training image", rec.image_id)));
        }
        for id in m.caption_ids() {
            if !texts.contains_key(id) {
                texts.insert(id.to_string(), training_text(store, id, mode)?);
                caption_labels.insert(id.to_string(), store.get(id).unwrap().label.clone());
            }
        }
        images.push(PairedImage {
            image_id: rec.image_id.clone(),
            label: rec.label.clone(),
            path: rec.path.clone(),
            captions: m.caption_ids().map(str::to_string).collect(),
        });
    }
    let pairs = PairDataset {
        caption_text_mode: mode,
        images,
        texts,
        caption_labels,
    };
    if let Some((img, cap)) = pairs.label_violations().into_iter().next() {
        return Err(Error::invalid(format!("caption {cap:?} does not share the label of image {img:?}")));
    }
    Ok(pairs)
}

/// Match then assemble. In `ShortWithClass` mode the matched captions must
/// already carry summaries.
pub fn build_pair_dataset(
    manifest: &DatasetManifest,
    store: &CaptionStore,
    backend: &Backend,
    n: usize,
    mode: CaptionTextMode,
) -> Result<(PairDataset, Vec<MatchAssignment>)> {
    let matches = match_training_images(manifest, store, backend, n)?;
    let pairs = assemble_pairs(manifest, store, &matches, mode)?;
    Ok((pairs, matches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Source;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec(), Source::Text, "t")
    }

    #[test]
    fn single_candidate() {
        let m = match_image_to_captions("i", &ev(&[1.0, 0.0]), &[("c".into(), ev(&[0.2, 0.9]))], 3).unwrap();
        assert_eq!(m.ranked.len(), 1);
        assert_eq!(m.ranked[0].caption_id, "c");
    }

    #[test]
    fn ties_break_by_caption_id() {
        // cos with (1,0): 0.9, 0.7, 0.7, 0.2
        let at = |c: f32| ev(&[c, (1.0 - c * c).sqrt()]);
        let caps = vec![
            ("c07".to_string(), at(0.7)),
            ("c01".to_string(), at(0.2)),
            ("c09".to_string(), at(0.9)),
            ("c02".to_string(), at(0.7)),
        ];
        let m = match_image_to_captions("i", &ev(&[1.0, 0.0]), &caps, 3).unwrap();
        let ids: Vec<_> = m.caption_ids().collect();
        assert_eq!(ids, ["c09", "c02", "c07"]);
        assert!(m.ranked.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn errors() {
        assert!(match_image_to_captions("i", &ev(&[1.0]), &[], 1).is_err());
        assert!(matches!(
            match_image_to_captions("i", &ev(&[1.0]), &[("c".into(), ev(&[1.0, 0.0]))], 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(match_image_to_captions("i", &ev(&[1.0]), &[("c".into(), ev(&[1.0]))], 0).is_err());
    }

    #[test]
    fn dataset_defaults() {
        assert_eq!(default_n_for("Fitzpatrick40"), Some(3));
        assert_eq!(default_n_for("fgvc-aircraft"), Some(4));
        assert_eq!(default_n_for("cub200"), Some(1));
        assert_eq!(default_n_for("flowers102"), Some(1));
    }
}
