use serde::{Deserialize, Serialize};

use super::params::{Gradient, PolicyParams};
use crate::scalar::{cst, Scalar};

/// Update rule. Gradients passed to [`Optimizer::step`] are loss gradients
/// (the step descends).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd {
        momentum: f64,
    },
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

impl OptimizerKind {
    /// AdamW with beta1 0.9, beta2 0.99 and weight decay 0.1.
    pub fn adamw() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer<F: Scalar> {
    kind: OptimizerKind,
    first: Option<Vec<F>>,
    second: Option<Vec<F>>,
    t: u64,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, first: None, second: None, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut PolicyParams<F>, grad: &Gradient<F>, lr: f64) {
        self.t += 1;
        let n = params.len();
        let lr = cst::<F>(lr);
        let g = grad.values();
        let p = params.values_mut();
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                let mu = cst::<F>(momentum);
                let v = self.first.get_or_insert_with(|| vec![F::zero(); n]);
                for i in 0..n {
                    v[i] = mu * v[i] + g[i];
                    p[i] -= lr * v[i];
                }
            }
            OptimizerKind::AdamW { beta1, beta2, eps, weight_decay } => {
                let (b1, b2) = (cst::<F>(beta1), cst::<F>(beta2));
                let bc1 = F::one() - b1.powi(self.t as i32);
                let bc2 = F::one() - b2.powi(self.t as i32);
                let (eps, wd) = (cst::<F>(eps), cst::<F>(weight_decay));
                let m = self.first.get_or_insert_with(|| vec![F::zero(); n]);
                let v = self.second.get_or_insert_with(|| vec![F::zero(); n]);
                for i in 0..n {
                    m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                    v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    p[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * p[i]);
                }
            }
        }
    }
}
