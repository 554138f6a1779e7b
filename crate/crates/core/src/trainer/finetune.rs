use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::batches::{sample_epoch_batches, TrainBatch};
use super::loss::contrastive_loss_with_grad;
use super::optim::{cosine_lr, Optimizer, OptimizerKind};
use crate::classifier::{train_linear_probe, ProbeConfig, Scorer};
use crate::embedding::{read_image, Backend, ProjectionHeads};
use crate::hashing::derive_seed;
use crate::linalg::{dot, norm, Matrix};
use crate::matcher::PairDataset;
use crate::{Error, Result};

/// Logit scale of contrastively pretrained checkpoints, used when a
/// backend does not carry its own.
pub const PRETRAINED_LOGIT_SCALE: f64 = 100.0;

/// Upper bound on the learned logit scale.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    /// Embeddings and gradients rounded to f32 around the loss.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    /// `None` keeps the scale carried by the backend's heads.
    pub logit_scale_init: Option<f64>,
    pub logit_scale_learnable: bool,
    pub seed: u64,
    pub precision: Precision,
    /// Drop same-label off-diagonal entries from the softmax denominators.
    pub label_masked: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 10,
            learning_rate: 1e-6,
            weight_decay: 0.1,
            optimizer: OptimizerKind::Adamw,
            logit_scale_init: None,
            logit_scale_learnable: true,
            seed: 0,
            precision: Precision::Fp32,
            label_masked: false,
        }
    }
}

/// `fixed:<v>` or `learnable:<v>`, as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitScale {
    pub init: f64,
    pub learnable: bool,
}

impl FromStr for LogitScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("logit scale {s:?}: expected fixed:<v> or learnable:<v>")))?;
        let init: f64 = value
            .parse()
            .ok()
            .filter(|v: &f64| *v > 0.0 && v.is_finite())
            .ok_or_else(|| Error::Config(format!("logit scale {s:?}: value must be a positive number")))?;
        let learnable = match mode {
            "fixed" => false,
            "learnable" => true,
            _ => return Err(Error::Config(format!("logit scale {s:?}: unknown mode {mode:?}"))),
        };
        Ok(LogitScale { init, learnable })
    }
}

impl TrainConfig {
    pub fn set_logit_scale(&mut self, scale: LogitScale) {
        self.logit_scale_init = Some(scale.init);
        self.logit_scale_learnable = scale.learnable;
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if let Some(s) = self.logit_scale_init {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("logit_scale_init must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Frozen base features for every image and caption of a pair dataset.
#[derive(Debug, Clone)]
pub struct PairFeatures {
    pub images: BTreeMap<String, Vec<f64>>,
    pub texts: BTreeMap<String, Vec<f64>>,
    pub labels: BTreeMap<String, usize>,
}

impl PairFeatures {
    pub fn compute(backend: &Backend, pairs: &PairDataset) -> Result<Self> {
        use rayon::prelude::*;
        let images = pairs
            .images
            .par_iter()
            .map(|img| {
                let bytes = read_image(&crate::data::ImageRecord {
                    image_id: img.image_id.clone(),
                    path: img.path.clone(),
                    label: img.label.clone(),
                    split: crate::data::Split::Train,
                })?;
                Ok((img.image_id.clone(), backend.base_image(&bytes)?))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let texts = pairs
            .texts
            .par_iter()
            .map(|(id, t)| Ok((id.clone(), backend.base_text(t)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let mut classes: Vec<&str> = pairs.images.iter().map(|i| i.label.as_str()).collect();
        classes.sort_unstable();
        classes.dedup();
        let labels = pairs
            .images
            .iter()
            .map(|i| (i.image_id.clone(), classes.binary_search(&i.label.as_str()).unwrap()))
            .collect();
        Ok(PairFeatures { images, texts, labels })
    }
}

/// Labelled base features used to pick the checkpoint with the best
/// linear-probe accuracy.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub classes: Vec<String>,
    pub train_features: Vec<Vec<f64>>,
    pub train_labels: Vec<usize>,
    pub val_features: Vec<Vec<f64>>,
    pub val_labels: Vec<usize>,
    pub probe: ProbeConfig,
}

impl ValidationSet {
    pub fn probe_accuracy(&self, heads: &ProjectionHeads) -> Result<f64> {
        let project = |xs: &[Vec<f64>]| xs.iter().map(|x| heads.image.matvec(x)).collect::<Vec<_>>();
        let probe = train_linear_probe(&project(&self.train_features), &self.train_labels, &self.classes, &self.probe)?.probe;
        let val = project(&self.val_features);
        let mut correct = 0usize;
        for (x, &y) in val.iter().zip(&self.val_labels) {
            if probe.predict(x)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / val.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    /// Summed loss over the batch.
    pub loss_sum: f64,
    /// `loss_sum / B`, the quantity being minimized.
    pub loss_mean: f64,
    pub logit_scale: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    Diverged { step: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub backend: Backend,
    pub heads: ProjectionHeads,
    pub status: TrainStatus,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Number of completed epochs behind the returned heads.
    pub selected_epoch: usize,
    pub selected_val_accuracy: Option<f64>,
}

struct Forward {
    normalized: Matrix,
    norms: Vec<f64>,
}

fn project_batch(w: &Matrix, ids: &[String], feats: &BTreeMap<String, Vec<f64>>, mixed: bool) -> Result<Forward> {
    let mut rows = Vec::with_capacity(ids.len());
    let mut norms = Vec::with_capacity(ids.len());
    for id in ids {
        let x = feats
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no features for {id:?}")))?;
        let u = w.matvec(x);
        let n = norm(&u);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroVector);
        }
        let mut a: Vec<f64> = u.iter().map(|v| v / n).collect();
        if mixed {
            a.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        rows.push(a);
        norms.push(n);
    }
    Ok(Forward {
        normalized: Matrix::from_rows(&rows),
        norms,
    })
}

/// Chain rule through `a = u / |u|`, `u = W x`, accumulated into `grad_w`.
fn backprop(
    grad_w: &mut [f64],
    cols: usize,
    fwd: &Forward,
    grad_a: &Matrix,
    ids: &[String],
    feats: &BTreeMap<String, Vec<f64>>,
    weight: f64,
) {
    for (i, id) in ids.iter().enumerate() {
        let a = fwd.normalized.row(i);
        let g = grad_a.row(i);
        let ag = dot(a, g);
        let x = &feats[id];
        for (r, (&ar, &gr)) in a.iter().zip(g).enumerate() {
            let du = weight * (gr - ar * ag) / fwd.norms[i];
            if du == 0.0 {
                continue;
            }
            for (gw, &xc) in grad_w[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *gw += du * xc;
            }
        }
    }
}

fn batch_labels(batch: &TrainBatch, feats: &PairFeatures) -> Vec<usize> {
    batch.image_ids.iter().map(|id| feats.labels[id]).collect()
}

/// Summed contrastive loss of one batch under the backend's current heads.
pub fn batch_loss(backend: &Backend, features: &PairFeatures, batch: &TrainBatch) -> Result<f64> {
    let heads = backend
        .heads()
        .ok_or_else(|| Error::invalid("backend has no projection heads"))?;
    let a = project_batch(&heads.image, &batch.image_ids, &features.images, false)?;
    let b = project_batch(&heads.text, &batch.caption_ids, &features.texts, false)?;
    Ok(contrastive_loss_with_grad(&a.normalized, &b.normalized, heads.logit_scale, None)?.loss)
}

/// Fine-tunes the projection heads of a trainable backend.
///
/// Each step minimizes the batch loss divided by `B`. The learning rate
/// follows a cosine decay over all steps. With a validation set, the heads
/// from the epoch with the highest probe accuracy are returned (the
/// untrained heads count as epoch 0; ties keep the earlier epoch). If the
/// loss or parameters become non-finite, training stops and the last good
/// heads are returned with a `Diverged` status.
pub fn finetune(
    backend: &Backend,
    pairs: &PairDataset,
    config: &TrainConfig,
    validation: Option<&ValidationSet>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut heads = backend
        .heads()
        .cloned()
        .ok_or_else(|| Error::invalid("backend is not trainable: it has no projection heads"))?;
    if pairs.is_empty() {
        return Err(Error::invalid("empty pair dataset"));
    }
    if let Some(s) = config.logit_scale_init {
        heads.logit_scale = s;
    }
    let features = PairFeatures::compute(backend, pairs)?;
    let mixed = config.precision == Precision::Mixed;
    let cols = heads.image.cols;
    let n_img = heads.image.data.len();
    let n_params = n_img + heads.text.data.len();
    let mut opt = Optimizer::new(config.optimizer, n_params);
    let mut scale_opt = Optimizer::new(config.optimizer, 1);
    let mut log_scale = [heads.logit_scale.ln()];
    let mut params: Vec<f64> = heads.image.data.iter().chain(&heads.text.data).copied().collect();

    let steps_per_epoch = pairs.images.len() / config.batch_size;
    let total_steps = steps_per_epoch * config.epochs;
    let mut steps = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best_acc = validation.map(|v| v.probe_accuracy(&heads)).transpose()?;
    let mut best = (heads.clone(), 0usize);
    let mut status = TrainStatus::Completed;
    let mut step = 0;

    'outer: for epoch in 0..config.epochs {
        let batches = sample_epoch_batches(pairs, config.batch_size, derive_seed(config.seed, &[epoch as u64]))?;
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let b = batch.len() as f64;
            let lr = cosine_lr(config.learning_rate, step, total_steps);
            let scale = heads.logit_scale;
            let fa = project_batch(&heads.image, &batch.image_ids, &features.images, mixed);
            let fb = project_batch(&heads.text, &batch.caption_ids, &features.texts, mixed);
            let (fa, fb) = match (fa, fb) {
                (Ok(a), Ok(b)) => (a, b),
                _ => {
                    status = TrainStatus::Diverged { step };
                    break 'outer;
                }
            };
            let labels = config.label_masked.then(|| batch_labels(batch, &features));
            let out = match contrastive_loss_with_grad(&fa.normalized, &fb.normalized, scale, labels.as_deref()) {
                Ok(o) if o.loss.is_finite() => o,
                _ => {
                    status = TrainStatus::Diverged { step };
                    break 'outer;
                }
            };
            let mut grads = vec![0.0; n_params];
            let (gi, gt) = grads.split_at_mut(n_img);
            let round = |m: Matrix| -> Matrix {
                if mixed {
                    Matrix {
                        data: m.data.iter().map(|v| *v as f32 as f64).collect(),
                        ..m
                    }
                } else {
                    m
                }
            };
            backprop(gi, cols, &fa, &round(out.grad_images), &batch.image_ids, &features.images, 1.0 / b);
            backprop(gt, cols, &fb, &round(out.grad_texts), &batch.caption_ids, &features.texts, 1.0 / b);
            opt.step(&mut params, &grads, lr, config.weight_decay);
            if config.logit_scale_learnable {
                let g = out.grad_scale * scale / b;
                scale_opt.step(&mut log_scale, &[g], lr, 0.0);
                log_scale[0] = log_scale[0].min(MAX_LOGIT_SCALE.ln());
            }
            if !params.iter().all(|p| p.is_finite()) || !log_scale[0].is_finite() {
                status = TrainStatus::Diverged { step };
                break 'outer;
            }
            heads.image.data.copy_from_slice(&params[..n_img]);
            heads.text.data.copy_from_slice(&params[n_img..]);
            heads.logit_scale = log_scale[0].exp();
            steps.push(StepLog {
                step,
                epoch,
                loss_sum: out.loss,
                loss_mean: out.loss / b,
                logit_scale: scale,
                learning_rate: lr,
            });
            epoch_loss += out.loss / b;
            step += 1;
        }
        let val_accuracy = validation.map(|v| v.probe_accuracy(&heads)).transpose()?;
        epochs.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / batches.len().max(1) as f64,
            val_accuracy,
        });
        log::info!(
            "epoch {epoch}: loss {:.5}{}",
            epoch_loss / batches.len().max(1) as f64,
            val_accuracy.map(|a| format!(", val probe {:.4}", a)).unwrap_or_default()
        );
        match (val_accuracy, best_acc) {
            (Some(a), Some(b)) if a > b => {
                best_acc = Some(a);
                best = (heads.clone(), epoch + 1);
            }
            (Some(_), _) => {}
            (None, _) => best = (heads.clone(), epoch + 1),
        }
    }
    if status != TrainStatus::Completed {
        log::warn!("training diverged at step {step}; keeping heads from epoch {}", best.1);
    }
    let (heads, selected_epoch) = best;
    Ok(TrainOutcome {
        backend: backend.clone().with_heads(heads.clone())?,
        heads,
        status,
        steps,
        epochs,
        selected_epoch,
        selected_val_accuracy: best_acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_scale_spec() {
        assert_eq!(
            "fixed:1.0".parse::<LogitScale>().unwrap(),
            LogitScale { init: 1.0, learnable: false }
        );
        assert!("learnable:100".parse::<LogitScale>().unwrap().learnable);
        assert!("fixed:-1".parse::<LogitScale>().is_err());
        assert!("sticky:1".parse::<LogitScale>().is_err());
        assert!("1.0".parse::<LogitScale>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
