//! Symmetric image/text contrastive objective.
//!
//! With `s_ij = scale · (image_i · text_j)` the loss is
//!
//! ```text
//! L = Σ_i [ logsumexp_j s_ij − s_ii ]  +  Σ_i [ logsumexp_j s_ji − s_ii ]
//! ```
//!
//! i.e. image→text plus text→image cross-entropy with diagonal targets,
//! summed (not averaged) over the batch.

use crate::linalg::{dot, norm, Matrix};
use crate::{Error, Result};

/// Largest allowed deviation of an input row norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_images: Matrix,
    pub grad_texts: Matrix,
    pub grad_scale: f64,
}

fn check_inputs(images: &Matrix, texts: &Matrix, scale: f64, labels: Option<&[usize]>) -> Result<()> {
    if images.rows == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if images.rows != texts.rows || images.cols != texts.cols {
        return Err(Error::invalid(format!(
            "batch shapes differ: {}x{} vs {}x{}",
            images.rows, images.cols, texts.rows, texts.cols
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("logit scale must be positive, got {scale}")));
    }
    for (name, m) in [("image", images), ("text", texts)] {
        for i in 0..m.rows {
            let n = norm(m.row(i));
            if !((n - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::invalid(format!("{name} embedding {i} has norm {n}, expected 1")));
            }
        }
    }
    if let Some(l) = labels {
        if l.len() != images.rows {
            return Err(Error::invalid("label count differs from batch size"));
        }
    }
    Ok(())
}

/// Softmax over the unmasked entries of `row`; writes probabilities into
/// `out` and returns the log-sum-exp.
fn softmax(row: &[f64], keep: impl Fn(usize) -> bool, out: &mut [f64]) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (j, (&x, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        *o = if keep(j) { (x - max).exp() } else { 0.0 };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    max + sum.ln()
}

/// Loss and its gradients with respect to both embedding matrices and the
/// logit scale.
///
/// With `labels`, off-diagonal entries whose image and text share a label
/// are removed from the softmax denominators (label-masked variant).
pub fn contrastive_loss_with_grad(
    images: &Matrix,
    texts: &Matrix,
    scale: f64,
    labels: Option<&[usize]>,
) -> Result<LossOutput> {
    check_inputs(images, texts, scale, labels)?;
    let b = images.rows;
    let mut logits = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            logits.data[i * b + j] = scale * dot(images.row(i), texts.row(j));
        }
    }
    if !logits.is_finite() {
        return Err(Error::invalid("non-finite logits"));
    }
    let keep = |i: usize, j: usize| i == j || labels.is_none_or(|l| l[i] != l[j]);

    // d loss / d logits
    let mut g = Matrix::zeros(b, b);
    let mut loss = 0.0;
    let mut probs = vec![0.0; b];
    for i in 0..b {
        let lse = softmax(logits.row(i), |j| keep(i, j), &mut probs);
        loss += lse - logits.get(i, i);
        for j in 0..b {
            g.data[i * b + j] += probs[j];
        }
        g.data[i * b + i] -= 1.0;
    }
    let mut column = vec![0.0; b];
    for i in 0..b {
        for (j, c) in column.iter_mut().enumerate() {
            *c = logits.get(j, i);
        }
        let lse = softmax(&column, |j| keep(j, i), &mut probs);
        loss += lse - logits.get(i, i);
        for j in 0..b {
            g.data[j * b + i] += probs[j];
        }
        g.data[i * b + i] -= 1.0;
    }
    if !loss.is_finite() {
        return Err(Error::invalid("non-finite loss"));
    }

    let d = images.cols;
    let mut grad_images = Matrix::zeros(b, d);
    let mut grad_texts = Matrix::zeros(b, d);
    let mut grad_scale = 0.0;
    for i in 0..b {
        for j in 0..b {
            let gij = g.get(i, j);
            if gij == 0.0 {
                continue;
            }
            grad_scale += gij * logits.get(i, j) / scale;
            let (ti, tj) = (images.row(i), texts.row(j));
            for k in 0..d {
                grad_images.data[i * d + k] += scale * gij * tj[k];
                grad_texts.data[j * d + k] += scale * gij * ti[k];
            }
        }
    }
    Ok(LossOutput {
        loss,
        grad_images,
        grad_texts,
        grad_scale,
    })
}

pub fn contrastive_loss(images: &Matrix, texts: &Matrix, scale: f64) -> Result<f64> {
    contrastive_loss_with_grad(images, texts, scale, None).map(|o| o.loss)
}
