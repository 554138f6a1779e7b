use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::embedding::normalized_f64;
use crate::hashing::substream;
use crate::linalg::{dot, Matrix};
use crate::{matfile, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// L2-normalize inputs before the linear layer.
    pub normalize_inputs: bool,
    /// Stop once the full-data loss has not improved by more than 1e-6 for
    /// this many epochs. Off by default.
    pub early_stopping_patience: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 500,
            learning_rate: 0.05,
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            normalize_inputs: true,
            early_stopping_patience: None,
        }
    }
}

/// Multinomial logistic regression over frozen embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `|Y| × d`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub class_order: Vec<String>,
    pub trained_on: Option<String>,
    pub input_normalized: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub probe: LinearProbe,
    /// Full-data training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProbeMeta {
    format: String,
    class_order: Vec<String>,
    trained_on: Option<String>,
    input_normalized: bool,
}

fn log_softmax_into(logits: &[f64], out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - lse).exp();
    }
    lse
}

impl LinearProbe {
    pub fn zeros(classes: Vec<String>, d: usize) -> Self {
        LinearProbe {
            weights: Matrix::zeros(classes.len(), d),
            bias: vec![0.0; classes.len()],
            class_order: classes,
            trained_on: None,
            input_normalized: false,
        }
    }

    fn input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.input_normalized {
            normalized_f64(x)
        } else {
            Ok(x.to_vec())
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weights.rows)
            .map(|c| dot(self.weights.row(c), x) + self.bias[c])
            .collect()
    }

    /// Mean cross-entropy over a labelled set.
    pub fn loss(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let mut p = vec![0.0; self.class_order.len()];
        let mut total = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let z = self.logits(&self.input(x)?);
            let lse = log_softmax_into(&z, &mut p);
            total += lse - z[y];
        }
        Ok(total / features.len() as f64)
    }

    /// Writes `<stem>.bin` (weights then a `1 × |Y|` bias row) and
    /// `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let bias = Matrix {
            rows: 1,
            cols: self.bias.len(),
            data: self.bias.clone(),
        };
        matfile::write(&stem.with_extension("bin"), &[&self.weights, &bias])?;
        let meta = ProbeMeta {
            format: "gist-linear-probe/1".into(),
            class_order: self.class_order.clone(),
            trained_on: self.trained_on.clone(),
            input_normalized: self.input_normalized,
        };
        let json = stem.with_extension("json");
        std::fs::write(&json, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let json = stem.with_extension("json");
        let meta: ProbeMeta =
            serde_json::from_str(&std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?)?;
        let mut mats = matfile::read(&stem.with_extension("bin"))?;
        if mats.len() != 2 || mats[1].rows != 1 || mats[1].cols != mats[0].rows || mats[0].rows != meta.class_order.len() {
            return Err(Error::invalid("probe file shape does not match its metadata"));
        }
        let bias = mats.pop().unwrap().data;
        let weights = mats.pop().unwrap();
        Ok(LinearProbe {
            weights,
            bias,
            class_order: meta.class_order,
            trained_on: meta.trained_on,
            input_normalized: meta.input_normalized,
        })
    }
}

impl Scorer for LinearProbe {
    fn class_order(&self) -> &[String] {
        &self.class_order
    }

    fn dim(&self) -> usize {
        self.weights.cols
    }

    fn scores(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(embedding)?;
        Ok(self.logits(&self.input(embedding)?))
    }
}

/// Minibatch SGD with momentum on softmax cross-entropy. Weights start at
/// zero; the last batch of an epoch may be short. Weight decay applies to
/// the weights, not the bias.
pub fn train_linear_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: &[String],
    config: &ProbeConfig,
) -> Result<TrainedProbe> {
    let n_classes = classes.len();
    if n_classes == 0 {
        return Err(Error::invalid("no classes"));
    }
    if features.len() != labels.len() {
        return Err(Error::invalid("feature and label counts differ"));
    }
    if features.len() < n_classes {
        return Err(Error::invalid(format!(
            "{} training examples for {n_classes} classes",
            features.len()
        )));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Config("probe batch size and learning rate must be positive".into()));
    }
    let mut present = vec![false; n_classes];
    for &y in labels {
        *present.get_mut(y).ok_or_else(|| Error::invalid(format!("label index {y} out of range")))? = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::invalid(format!("class {:?} has no training examples", classes[c])));
    }
    let d = features[0].len();
    let xs: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
            }
            if config.normalize_inputs {
                normalized_f64(x)
            } else {
                Ok(x.clone())
            }
        })
        .collect::<Result<_>>()?;

    let mut probe = LinearProbe::zeros(classes.to_vec(), d);
    let mut vel_w = vec![0.0; n_classes * d];
    let mut vel_b = vec![0.0; n_classes];
    let mut grad_w = vec![0.0; n_classes * d];
    let mut grad_b = vec![0.0; n_classes];
    let mut p = vec![0.0; n_classes];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        let mut rng = substream(config.seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &xs[i];
                let z = probe.logits(x);
                log_softmax_into(&z, &mut p);
                p[labels[i]] -= 1.0;
                for c in 0..n_classes {
                    grad_b[c] += p[c];
                    for (g, &xj) in grad_w[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *g += p[c] * xj;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((w, v), g) in probe.weights.data.iter_mut().zip(&mut vel_w).zip(&grad_w) {
                *v = config.momentum * *v + g * scale + config.weight_decay * *w;
                *w -= config.learning_rate * *v;
            }
            for ((b, v), g) in probe.bias.iter_mut().zip(&mut vel_b).zip(&grad_b) {
                *v = config.momentum * *v + g * scale;
                *b -= config.learning_rate * *v;
            }
        }
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            let z = probe.logits(x);
            total += log_softmax_into(&z, &mut p) - z[y];
        }
        let loss = total / xs.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: epoch });
        }
        epoch_losses.push(loss);
        if let Some(patience) = config.early_stopping_patience {
            if loss < best - 1e-6 {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    probe.input_normalized = config.normalize_inputs;
    Ok(TrainedProbe { probe, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn too_few_examples() {
        let err = train_linear_probe(&[vec![1.0, 0.0]], &[0], &names(2), &ProbeConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn absent_class_is_named() {
        let xs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let err = train_linear_probe(&xs, &[0, 0, 2], &names(3), &ProbeConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("c1"), "{err}");
    }

    #[test]
    fn zero_probe_scores_uniform_and_picks_class_zero() {
        let p = LinearProbe::zeros(names(4), 3);
        assert_eq!(p.scores(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(p.predict(&[0.3, -1.0, 2.0]).unwrap(), 0);
        assert!(p.scores(&[1.0]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let xs = vec![vec![1.0, 0.2], vec![-0.1, 1.0], vec![0.9, 0.1]];
        let cfg = ProbeConfig { epochs: 5, ..Default::default() };
        let p = train_linear_probe(&xs, &[0, 1, 0], &names(2), &cfg).unwrap().probe;
        let stem = dir.path().join("probe");
        p.save(&stem).unwrap();
        let back = LinearProbe::load(&stem).unwrap();
        // matfile stores f32
        for (a, b) in back.weights.data.iter().zip(&p.weights.data) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(back.class_order, p.class_order);
        assert!(back.input_normalized);
    }
}
