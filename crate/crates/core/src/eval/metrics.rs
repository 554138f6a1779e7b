use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::topk_indices;
use crate::hashing::substream;
use crate::{Error, Result};

/// Whether the top-`k` scores of each row include its label.
pub fn topk_hits(scores: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Vec<bool>> {
    if scores.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} score rows but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_classes = scores[0].len();
    if k == 0 || k > n_classes {
        return Err(Error::invalid(format!("k = {k} outside 1..={n_classes}")));
    }
    scores
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            if row.len() != n_classes {
                return Err(Error::DimensionMismatch {
                    expected: n_classes,
                    actual: row.len(),
                });
            }
            if y >= n_classes {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            Ok(topk_indices(row, k).contains(&y))
        })
        .collect()
}

/// Fraction of rows whose label is among the `k` highest scores (ties
/// rank the lower class index first).
pub fn topk_accuracy(scores: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    let hits = topk_hits(scores, labels, k)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { resamples: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapStats {
    pub mean: f64,
    /// Population standard deviation over resamples.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divides by `n - 1`.
    #[default]
    Sample,
    /// Divides by `n`.
    Population,
}

fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match kind {
        StdKind::Sample if values.len() > 1 => n - 1.0,
        StdKind::Sample => return (mean, 0.0),
        StdKind::Population => n,
    };
    (mean, (ss / denom).sqrt())
}

fn resample_accuracy(hits: &[bool], seed: u64, r: usize) -> f64 {
    let mut rng = substream(seed, &[r as u64]);
    let n = hits.len();
    let correct = (0..n).filter(|_| hits[rng.gen_range(0..n)]).count();
    correct as f64 / n as f64
}

fn bootstrap_impl(
    scores: &[Vec<f64>],
    labels: &[usize],
    config: BootstrapConfig,
    k: usize,
    parallel: bool,
) -> Result<BootstrapStats> {
    if config.resamples == 0 {
        return Err(Error::Config("bootstrap needs at least one resample".into()));
    }
    let hits = topk_hits(scores, labels, k)?;
    let accs: Vec<f64> = if parallel {
        (0..config.resamples)
            .into_par_iter()
            .map(|r| resample_accuracy(&hits, config.seed, r))
            .collect()
    } else {
        (0..config.resamples)
            .map(|r| resample_accuracy(&hits, config.seed, r))
            .collect()
    };
    let (mean, std) = mean_std(&accs, StdKind::Population);
    Ok(BootstrapStats { mean, std })
}

/// Resamples the test set (size `N`, with replacement) `resamples` times.
/// Resample `r` draws from its own stream derived from `(seed, r)`, so the
/// result does not depend on scheduling.
pub fn bootstrap_accuracy(
    scores: &[Vec<f64>],
    labels: &[usize],
    config: BootstrapConfig,
    k: usize,
) -> Result<BootstrapStats> {
    bootstrap_impl(scores, labels, config, k, true)
}

pub fn bootstrap_accuracy_serial(
    scores: &[Vec<f64>],
    labels: &[usize],
    config: BootstrapConfig,
    k: usize,
) -> Result<BootstrapStats> {
    bootstrap_impl(scores, labels, config, k, false)
}

/// Mean and standard deviation over per-seed accuracies. Exactly
/// `expected` values are required.
pub fn aggregate_kshot(values: &[Option<f64>], expected: usize, kind: StdKind) -> Result<(f64, f64)> {
    if values.len() != expected {
        return Err(Error::invalid(format!(
            "expected {expected} seed runs, got {}",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(Option::is_none) {
        return Err(Error::invalid(format!("seed run {i} is missing")));
    }
    if expected == 0 {
        return Err(Error::invalid("no seed runs to aggregate"));
    }
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    Ok(mean_std(&v, kind))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_ranked_truth() {
        let scores = vec![vec![0.9, 0.5, 0.1], vec![0.2, 0.1, 0.7]];
        let labels = [1, 0];
        assert_eq!(topk_accuracy(&scores, &labels, 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&scores, &labels, 3).unwrap(), 1.0);
        assert!(topk_accuracy(&scores, &labels, 4).is_err());
        assert!(topk_accuracy(&[], &[], 1).is_err());
    }

    #[test]
    fn all_correct_bootstrap_has_no_spread() {
        let scores = vec![vec![1.0, 0.0]; 10];
        let s = bootstrap_accuracy(&scores, &[0; 10], BootstrapConfig::default(), 1).unwrap();
        assert_eq!(s, BootstrapStats { mean: 1.0, std: 0.0 });
    }

    #[test]
    fn kshot_aggregation() {
        let (m, s) = aggregate_kshot(&[Some(40.0); 3], 3, StdKind::Sample).unwrap();
        assert_eq!((m, s), (40.0, 0.0));
        let (m, s) = aggregate_kshot(&[Some(30.0), Some(40.0), Some(50.0)], 3, StdKind::Sample).unwrap();
        assert!((m - 40.0).abs() < 1e-12 && (s - 10.0).abs() < 1e-12);
        let (_, p) = aggregate_kshot(&[Some(30.0), Some(40.0), Some(50.0)], 3, StdKind::Population).unwrap();
        assert!((p - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(aggregate_kshot(&[Some(1.0), None, Some(2.0)], 3, StdKind::Sample).is_err());
        assert!(aggregate_kshot(&[Some(1.0), Some(2.0)], 3, StdKind::Sample).is_err());
    }
}
