use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adamw,
}

/// Per-parameter-group optimizer state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { momentum: f64, velocity: Vec<f64> },
    AdamW { beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: u32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::SgdMomentum => Optimizer::Sgd {
                momentum: 0.9,
                velocity: vec![0.0; len],
            },
            OptimizerKind::Adamw => Optimizer::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
        }
    }

    /// SGD couples weight decay into the gradient; AdamW decays the
    /// weights directly.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Sgd { momentum, velocity } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    *v = *momentum * *v + g + weight_decay * *p;
                    *p -= lr * *v;
                }
            }
            Optimizer::AdamW { beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (((p, g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *p -= lr * weight_decay * *p;
                    *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                    *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                    *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + *eps);
                }
            }
        }
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
