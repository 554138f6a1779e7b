use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Image,
    Text,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Image => "image",
            Source::Text => "text",
        }
    }
}

/// A `d`-dimensional encoder output. Values are stored in single precision;
/// similarities are always computed in double precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub normalized: bool,
    pub source: Source,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, source: Source, model_id: impl Into<String>) -> Self {
        EmbeddingVector {
            values,
            normalized: false,
            source,
            model_id: model_id.into(),
        }
    }

    pub fn from_f64(values: &[f64], source: Source, model_id: impl Into<String>) -> Self {
        Self::new(values.iter().map(|&x| x as f32).collect(), source, model_id)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&x| x as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, factor: f32) -> Self {
        let mut v = self.clone();
        v.values.iter_mut().for_each(|x| *x *= factor);
        v.normalized = false;
        v
    }
}

/// Unit-norm copy of `v`. The division happens in double precision.
pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector {
        values: v.values.iter().map(|&x| (x as f64 / n) as f32).collect(),
        normalized: true,
        source: v.source,
        model_id: v.model_id.clone(),
    })
}

/// Unit-norm copy of a double-precision vector.
pub fn normalized_f64(v: &[f64]) -> Result<Vec<f64>> {
    let n = crate::linalg::norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u
        .values
        .iter()
        .zip(&v.values)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec(), Source::Image, "t")
    }

    #[test]
    fn three_four_five() {
        let n = l2_normalize(&ev(&[3.0, 4.0])).unwrap();
        assert_eq!(n.values, vec![0.6, 0.8]);
        assert!(n.normalized);
    }

    #[test]
    fn unit_vector_unchanged() {
        let n = l2_normalize(&ev(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(n.values, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(l2_normalize(&ev(&[0.0, 0.0])), Err(Error::ZeroVector)));
        assert!(matches!(
            cosine_similarity(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn cosine_examples() {
        let u = ev(&[1.0, 0.0]);
        assert_eq!(cosine_similarity(&u, &u).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&u, &ev(&[0.0, 1.0])).unwrap(), 0.0);
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let c = cosine_similarity(&ev(&[h, h]), &u).unwrap();
        assert!((c - 0.70710678).abs() < 1e-7);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            cosine_similarity(&ev(&[1.0]), &ev(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
