use serde::{Deserialize, Serialize};

use crate::classifier::Scorer;
use crate::data::{DatasetManifest, ImageRecord};
use crate::embedding::{encode_images, Backend};
use crate::eval::{bootstrap_accuracy, topk_accuracy, BootstrapConfig, BootstrapStats};
use crate::{Error, Result};

/// Image embeddings of a set of records with their class indices.
#[derive(Debug, Clone)]
pub struct SplitFeatures {
    pub image_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn image_features(backend: &Backend, manifest: &DatasetManifest, records: &[ImageRecord]) -> Result<SplitFeatures> {
    let embs = encode_images(backend, records)?;
    let labels = records
        .iter()
        .map(|r| {
            manifest
                .class_index(&r.label)
                .ok_or_else(|| Error::invalid(format!("image {:?} has unknown label {:?}", r.image_id, r.label)))
        })
        .collect::<Result<_>>()?;
    Ok(SplitFeatures {
        image_ids: records.iter().map(|r| r.image_id.clone()).collect(),
        features: embs.iter().map(|e| e.to_f64()).collect(),
        labels,
    })
}

/// Point and bootstrap accuracies of one scorer on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub top1: f64,
    pub top3: f64,
    pub top3_k: usize,
    pub bootstrap_top1: BootstrapStats,
    pub bootstrap_top3: BootstrapStats,
}

pub fn score_split(scorer: &dyn Scorer, split: &SplitFeatures, bootstrap: BootstrapConfig) -> Result<MethodScores> {
    if split.features.is_empty() {
        return Err(Error::invalid("no evaluation images"));
    }
    let scores = scorer.score_all(&split.features)?;
    let k3 = 3.min(scorer.class_order().len());
    Ok(MethodScores {
        top1: topk_accuracy(&scores, &split.labels, 1)?,
        top3: topk_accuracy(&scores, &split.labels, k3)?,
        top3_k: k3,
        bootstrap_top1: bootstrap_accuracy(&scores, &split.labels, bootstrap, 1)?,
        bootstrap_top3: bootstrap_accuracy(&scores, &split.labels, bootstrap, k3)?,
    })
}
