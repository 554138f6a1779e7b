use std::collections::HashSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split};
use crate::hashing::substream;
use crate::{Error, Result};

/// Seeds used when a run asks for k-shot samples without naming any.
pub const DEFAULT_KSHOT_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotSpec {
    pub k: usize,
    pub seed: u64,
    /// Take every image of a class that has fewer than `k`.
    #[serde(default)]
    pub clamp: bool,
}

/// Keeps `k` training images per class, drawn without replacement.
///
/// Each class draws from its own substream of `(seed, class index)`, so the
/// selection for one class does not depend on any other class. Selected
/// records keep their manifest order; validation and test are untouched.
pub fn sample_kshot(manifest: &DatasetManifest, spec: &KShotSpec) -> Result<DatasetManifest> {
    if spec.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut keep: HashSet<&str> = HashSet::new();
    for (ci, class) in manifest.classes().iter().enumerate() {
        let pool: Vec<&str> = manifest
            .split(Split::Train)
            .filter(|r| &r.label == class)
            .map(|r| r.image_id.as_str())
            .collect();
        if pool.len() < spec.k && !spec.clamp {
            return Err(Error::UnderPopulatedClass {
                class: class.clone(),
                available: pool.len(),
                requested: spec.k,
            });
        }
        let take = spec.k.min(pool.len());
        let mut rng = substream(spec.seed, &[ci as u64]);
        for i in sample(&mut rng, pool.len(), take) {
            keep.insert(pool[i]);
        }
    }
    let records = manifest
        .records()
        .iter()
        .filter(|r| r.split != Split::Train || keep.contains(r.image_id.as_str()))
        .cloned()
        .collect();
    manifest.with_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageRecord;

    fn manifest(per_class: &[usize]) -> DatasetManifest {
        let classes: Vec<String> = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        let mut records = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                records.push(ImageRecord {
                    image_id: format!("c{c}-{i}"),
                    path: format!("{c}/{i}.png").into(),
                    label: format!("c{c}"),
                    split: Split::Train,
                });
            }
            records.push(ImageRecord {
                image_id: format!("c{c}-test"),
                path: "t.png".into(),
                label: format!("c{c}"),
                split: Split::Test,
            });
        }
        DatasetManifest::new("m", classes, records).unwrap()
    }

    #[test]
    fn one_shot_over_forty_classes() {
        let m = manifest(&[6; 40]);
        let s = sample_kshot(&m, &KShotSpec { k: 1, seed: 0, clamp: false }).unwrap();
        assert_eq!(s.count(Split::Train), 40);
        assert_eq!(s.count(Split::Test), 40);
    }

    #[test]
    fn deterministic_bytes() {
        let m = manifest(&[9, 7, 12]);
        let spec = KShotSpec { k: 3, seed: 11, clamp: false };
        assert_eq!(
            sample_kshot(&m, &spec).unwrap().to_jsonl(),
            sample_kshot(&m, &spec).unwrap().to_jsonl()
        );
    }

    #[test]
    fn clamp_takes_all_of_small_class() {
        let m = manifest(&[10, 2]);
        let err = sample_kshot(&m, &KShotSpec { k: 5, seed: 0, clamp: false }).unwrap_err();
        assert!(matches!(err, Error::UnderPopulatedClass { ref class, available: 2, .. } if class == "c1"));
        let s = sample_kshot(&m, &KShotSpec { k: 5, seed: 0, clamp: true }).unwrap();
        assert_eq!(s.split(Split::Train).filter(|r| r.label == "c1").count(), 2);
        assert_eq!(s.split(Split::Train).filter(|r| r.label == "c0").count(), 5);
    }

    #[test]
    fn adding_a_class_leaves_other_draws_alone() {
        let a = manifest(&[10, 10]);
        let b = manifest(&[10, 10, 10]);
        let spec = KShotSpec { k: 3, seed: 4, clamp: false };
        let ids = |m: &DatasetManifest, c: &str| -> Vec<String> {
            m.split(Split::Train).filter(|r| r.label == c).map(|r| r.image_id.clone()).collect()
        };
        let (sa, sb) = (sample_kshot(&a, &spec).unwrap(), sample_kshot(&b, &spec).unwrap());
        assert_eq!(ids(&sa, "c0"), ids(&sb, "c0"));
        assert_eq!(ids(&sa, "c1"), ids(&sb, "c1"));
    }

    #[test]
    fn zero_k_rejected() {
        assert!(sample_kshot(&manifest(&[3]), &KShotSpec { k: 0, seed: 0, clamp: true }).is_err());
    }
}
