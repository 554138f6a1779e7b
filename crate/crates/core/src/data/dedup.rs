use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split};
use crate::embedding::{normalized_f64, EmbeddingVector};
use crate::linalg::dot;
use crate::{Error, Result};

/// Near-duplicate threshold that worked for CLIP ViT-B/32 image embeddings.
pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 0.95605;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub id_a: String,
    pub id_b: String,
    pub similarity: f64,
}

/// Every unordered pair whose cosine similarity is at least `threshold`,
/// sorted by descending similarity, then by `(id_a, id_b)`. Within a pair
/// `id_a < id_b`.
pub fn find_near_duplicates(
    embeddings: &BTreeMap<String, EmbeddingVector>,
    threshold: f64,
) -> Result<Vec<DuplicatePair>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    let ids: Vec<&String> = embeddings.keys().collect();
    let dim = embeddings.values().next().map_or(0, EmbeddingVector::dim);
    let unit: Vec<Vec<f64>> = embeddings
        .values()
        .map(|v| {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            normalized_f64(&v.to_f64())
        })
        .collect::<Result<_>>()?;

    let mut pairs: Vec<DuplicatePair> = (0..unit.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let unit = &unit;
            let ids = &ids;
            (i + 1..unit.len()).filter_map(move |j| {
                let s = dot(&unit[i], &unit[j]).clamp(-1.0, 1.0);
                // BTreeMap keys are sorted, so ids[i] < ids[j].
                (s >= threshold).then(|| DuplicatePair {
                    id_a: ids[i].clone(),
                    id_b: ids[j].clone(),
                    similarity: s,
                })
            })
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (&a.id_a, &a.id_b).cmp(&(&b.id_a, &b.id_b)))
    });
    Ok(pairs)
}

/// Moves both members of every pair that touches the test split into train.
/// Records are never dropped, and applying this twice equals applying it once.
pub fn resolve_split_leakage(manifest: &DatasetManifest, pairs: &[DuplicatePair]) -> Result<DatasetManifest> {
    let mut move_to_train: HashSet<&str> = HashSet::new();
    for p in pairs {
        let a = manifest.get(&p.id_a).ok_or_else(|| Error::UnknownImage(p.id_a.clone()))?;
        let b = manifest.get(&p.id_b).ok_or_else(|| Error::UnknownImage(p.id_b.clone()))?;
        if a.split == Split::Test || b.split == Split::Test {
            move_to_train.insert(&p.id_a);
            move_to_train.insert(&p.id_b);
        }
    }
    let records = manifest
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if move_to_train.contains(r.image_id.as_str()) {
                r.split = Split::Train;
            }
            r
        })
        .collect();
    manifest.with_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageRecord;
    use crate::embedding::Source;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec(), Source::Image, "t")
    }

    #[test]
    fn identical_vectors_pair_up() {
        let m: BTreeMap<_, _> = [("x".to_string(), ev(&[1.0, 2.0])), ("y".to_string(), ev(&[1.0, 2.0]))].into();
        let p = find_near_duplicates(&m, DEFAULT_DUPLICATE_THRESHOLD).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!((p[0].id_a.as_str(), p[0].id_b.as_str()), ("x", "y"));
    }

    #[test]
    fn orthogonal_vectors_do_not() {
        let m: BTreeMap<_, _> = [("x".to_string(), ev(&[1.0, 0.0])), ("y".to_string(), ev(&[0.0, 3.0]))].into();
        assert!(find_near_duplicates(&m, DEFAULT_DUPLICATE_THRESHOLD).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_and_bad_threshold() {
        let m: BTreeMap<_, _> = [("x".to_string(), ev(&[1.0, 0.0])), ("y".to_string(), ev(&[0.0]))].into();
        assert!(matches!(find_near_duplicates(&m, 0.9), Err(Error::DimensionMismatch { .. })));
        assert!(find_near_duplicates(&BTreeMap::new(), 0.0).is_err());
        assert!(find_near_duplicates(&BTreeMap::new(), 1.5).is_err());
    }

    fn rec(id: &str, split: Split) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            path: "p".into(),
            label: "a".into(),
            split,
        }
    }

    fn pair(a: &str, b: &str) -> DuplicatePair {
        DuplicatePair {
            id_a: a.into(),
            id_b: b.into(),
            similarity: 0.99,
        }
    }

    #[test]
    fn test_train_pair_moves_to_train() {
        let m = DatasetManifest::new(
            "m",
            vec!["a".into()],
            vec![rec("t1", Split::Test), rec("r1", Split::Train), rec("v1", Split::Val), rec("v2", Split::Val)],
        )
        .unwrap();
        let out = resolve_split_leakage(&m, &[pair("r1", "t1"), pair("v1", "v2")]).unwrap();
        assert_eq!(out.get("t1").unwrap().split, Split::Train);
        assert_eq!(out.get("r1").unwrap().split, Split::Train);
        // val×val is not leakage into test
        assert_eq!(out.get("v1").unwrap().split, Split::Val);
        assert_eq!(out.records().len(), 4);
        assert_eq!(resolve_split_leakage(&out, &[pair("r1", "t1")]).unwrap(), out);
        assert_eq!(resolve_split_leakage(&m, &[]).unwrap(), m);
        assert!(matches!(
            resolve_split_leakage(&m, &[pair("zz", "t1")]),
            Err(Error::UnknownImage(_))
        ));
    }
}
