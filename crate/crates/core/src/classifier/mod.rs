//! Classification heads over image embeddings.

mod probe;
mod zeroshot;

pub use probe::{train_linear_probe, LinearProbe, ProbeConfig, TrainedProbe};
pub use zeroshot::{build_zeroshot_head, ZeroShotHead, DEFAULT_TEMPLATES};

use crate::{Error, Result};

/// Anything that maps an image embedding to one score per class.
pub trait Scorer {
    fn class_order(&self) -> &[String];
    fn dim(&self) -> usize;
    fn scores(&self, embedding: &[f64]) -> Result<Vec<f64>>;

    fn check_dim(&self, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: embedding.len(),
            });
        }
        Ok(())
    }

    fn score_all(&self, embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        embeddings.iter().map(|e| self.scores(e)).collect()
    }

    fn predict(&self, embedding: &[f64]) -> Result<usize> {
        Ok(topk_indices(&self.scores(embedding)?, 1)[0])
    }
}

/// Indices of the `k` highest scores, best first; equal scores rank by
/// lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(topk_indices(&[1.0, 3.0, 3.0, 0.0], 3), vec![1, 2, 0]);
        assert_eq!(topk_indices(&[0.0; 4], 2), vec![0, 1]);
    }
}
