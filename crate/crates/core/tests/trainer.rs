use std::collections::BTreeMap;

use gist_core::data::{load_manifest, Split};
use gist_core::embedding::Backend;
use gist_core::linalg::Matrix;
use gist_core::matcher::{CaptionTextMode, PairDataset, PairedImage};
use gist_core::synth::{write_toy_dataset, ToyConfig};
use gist_core::trainer::{
    batch_loss, finetune, sample_epoch_batches, OptimizerKind, PairFeatures, TrainConfig, TrainStatus,
};

const SETTINGS: [&str; 3] = ["shore", "forest", "meadow"];

fn toy_pairs(dir: &std::path::Path) -> PairDataset {
    let ds = write_toy_dataset(dir, &ToyConfig::default()).unwrap();
    let manifest = load_manifest(&ds.manifest).unwrap();
    let mut texts = BTreeMap::new();
    let mut caption_labels = BTreeMap::new();
    for class in manifest.classes() {
        for (k, s) in SETTINGS.iter().enumerate() {
            let id = format!("{class}-{k}");
            texts.insert(id.clone(), format!("{} at the {s}", class.replace('_', " ")));
            caption_labels.insert(id, class.clone());
        }
    }
    let images = manifest
        .split(Split::Train)
        .map(|r| PairedImage {
            image_id: r.image_id.clone(),
            label: r.label.clone(),
            path: r.path.clone(),
            captions: (0..SETTINGS.len()).map(|k| format!("{}-{k}", r.label)).collect(),
        })
        .collect();
    PairDataset {
        caption_text_mode: CaptionTextMode::ShortWithClass,
        images,
        texts,
        caption_labels,
    }
}

fn backend() -> Backend {
    Backend::open("synthetic-concept-64").unwrap().trainable(10.0).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 20,
        epochs,
        learning_rate: 5e-3,
        weight_decay: 0.0,
        optimizer: OptimizerKind::Adamw,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_keeps_identity_heads() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy_pairs(dir.path());
    let out = finetune(&backend(), &pairs, &config(0), None).unwrap();
    assert_eq!(out.heads.image, Matrix::identity(64));
    assert_eq!(out.heads.text, Matrix::identity(64));
    assert!(out.steps.is_empty());
    assert_eq!(out.status, TrainStatus::Completed);
}

#[test]
fn training_lowers_the_batch_loss() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy_pairs(dir.path());
    let b = backend();
    // 100 images / 20 per batch = 5 steps per epoch
    let out = finetune(&b, &pairs, &config(40), None).unwrap();
    assert_eq!(out.steps.len(), 200);
    assert_eq!(out.status, TrainStatus::Completed);

    let feats = PairFeatures::compute(&b, &pairs).unwrap();
    let batch = &sample_epoch_batches(&pairs, 20, 99).unwrap()[0];
    let before = batch_loss(&b, &feats, batch).unwrap();
    let after = batch_loss(&out.backend, &feats, batch).unwrap();
    assert!(after < before, "{after} >= {before}");
    let first: f64 = out.steps[..5].iter().map(|s| s.loss_mean).sum();
    let last: f64 = out.steps[195..].iter().map(|s| s.loss_mean).sum();
    assert!(last < first);
}

#[test]
fn same_seed_same_heads() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy_pairs(dir.path());
    let a = finetune(&backend(), &pairs, &config(3), None).unwrap();
    let b = finetune(&backend(), &pairs, &config(3), None).unwrap();
    assert_eq!(a.heads, b.heads);
    let c = finetune(&backend(), &pairs, &TrainConfig { seed: 4, ..config(3) }, None).unwrap();
    assert_ne!(a.heads, c.heads);
}

#[test]
fn frozen_backend_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy_pairs(dir.path());
    let frozen = Backend::open("synthetic-concept-64").unwrap();
    assert!(finetune(&frozen, &pairs, &config(1), None).is_err());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = toy_pairs(dir.path());
    let cfg = TrainConfig {
        learning_rate: 1e300,
        optimizer: OptimizerKind::SgdMomentum,
        ..config(2)
    };
    let out = finetune(&backend(), &pairs, &cfg, None).unwrap();
    assert!(matches!(out.status, TrainStatus::Diverged { .. }), "{:?}", out.status);
    assert!(out.heads.image.is_finite() && out.heads.text.is_finite());
}

#[test]
fn caption_choice_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let mut pairs = toy_pairs(dir.path());
    pairs.images.truncate(1);
    let trials = 3000;
    let mut counts = [0usize; 3];
    for seed in 0..trials {
        let batch = &sample_epoch_batches(&pairs, 1, seed).unwrap()[0];
        let k: usize = batch.caption_ids[0].rsplit('-').next().unwrap().parse().unwrap();
        counts[k] += 1;
    }
    let expected = trials as f64 / 3.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 2 degrees of freedom, p = 0.001
    assert!(chi2 < 13.82, "chi-square {chi2} for {counts:?}");
}
