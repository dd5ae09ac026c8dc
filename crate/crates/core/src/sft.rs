//! Supervised fine-tuning on oracle reasoning traces.
//!
//! The loss is the per-token mean negative log-likelihood of the target
//! continuation given its context. Context positions are never scored.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SftTrace, TokenId};
use crate::error::{Error, Result};
use crate::policy::{continuation_logprobs, weighted_logprob_grad, Gradient, Optimizer, OptimizerKind, PolicyParams};
use crate::rng;
use crate::scalar::{cst, to_f64, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    #[default]
    CosineWithWarmup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub warmup_ratio: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 2,
            epochs: 3,
            lr_schedule: LrSchedule::CosineWithWarmup,
            warmup_ratio: 0.1,
            seed: 0,
            optimizer: OptimizerKind::default(),
            max_grad_norm: None,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("sft.learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("sft.batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("sft.warmup_ratio must be in [0, 1), got {}", self.warmup_ratio)));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("sft.max_grad_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Learning rate at zero-based `step` out of `total` steps.
///
/// Warmup ramps linearly to the peak over `ceil(warmup_ratio * total)` steps,
/// then a half cosine decays to zero at `total`.
pub fn scheduled_lr(schedule: LrSchedule, peak: f64, warmup_ratio: f64, step: usize, total: usize) -> f64 {
    match schedule {
        LrSchedule::Constant => peak,
        LrSchedule::CosineWithWarmup => {
            let warmup = (warmup_ratio * total as f64).ceil() as usize;
            if step < warmup {
                return peak * (step + 1) as f64 / warmup as f64;
            }
            let span = total.saturating_sub(warmup).max(1);
            let progress = (step - warmup) as f64 / span as f64;
            peak * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
        }
    }
}

fn token_count(batch: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("SFT batch is empty".into()));
    }
    let n: usize = batch.iter().map(|(_, t)| t.len()).sum();
    if n == 0 {
        return Err(Error::InvalidArgument("SFT batch has no target tokens".into()));
    }
    Ok(n)
}

/// Mean target-token negative log-likelihood without touching parameters.
pub fn batch_loss<F: Scalar>(params: &PolicyParams<F>, batch: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<F> {
    let n = token_count(batch)?;
    let per: Vec<F> = batch
        .par_iter()
        .map(|(c, t)| continuation_logprobs(params, c, t).map(|lp| lp.into_iter().sum::<F>()))
        .collect::<Result<_>>()?;
    Ok(-per.into_iter().sum::<F>() / cst::<F>(n as f64))
}

/// Loss and its gradient for one batch. Per-sequence gradients are computed
/// in parallel and summed in batch order so results do not depend on
/// scheduling.
pub fn loss_and_grad<F: Scalar>(
    params: &PolicyParams<F>,
    batch: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<(F, Gradient<F>)> {
    let n = token_count(batch)?;
    let w = -F::one() / cst::<F>(n as f64);
    let parts: Vec<(F, Gradient<F>)> = batch
        .par_iter()
        .map(|(c, t)| {
            let mut g = params.zeros_like();
            let lp = weighted_logprob_grad(params, c, t, |lp| vec![w; lp.len()], &mut g)?;
            Ok((lp.into_iter().sum::<F>(), g))
        })
        .collect::<Result<_>>()?;
    let mut grad = params.zeros_like();
    let mut total = F::zero();
    for (s, g) in &parts {
        total += *s;
        grad.axpy(F::one(), g);
    }
    Ok((-total / cst::<F>(n as f64), grad))
}

/// One optimizer step on `batch`. Returns the mean negative log-likelihood
/// measured before the update.
pub fn sft_step<F: Scalar>(
    params: &mut PolicyParams<F>,
    batch: &[(Vec<TokenId>, Vec<TokenId>)],
    optimizer: &mut Optimizer<F>,
    lr: f64,
    max_grad_norm: Option<f64>,
) -> Result<F> {
    let (loss, mut grad) = loss_and_grad(params, batch)?;
    if !grad.is_finite() || !loss.is_finite() {
        return Err(Error::NonFiniteGradient {
            step: optimizer.steps_taken() as usize,
            detail: format!("SFT loss {loss}"),
        });
    }
    if let Some(c) = max_grad_norm {
        grad.clip_norm(cst(c));
    }
    optimizer.step(params, &grad, lr);
    Ok(loss)
}

/// One entry of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftStepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Trains for `cfg.epochs` passes over `traces`, reshuffled each epoch from
/// the seed.
pub fn run_sft<F: Scalar>(
    params: &PolicyParams<F>,
    traces: &[SftTrace],
    cfg: &SftConfig,
) -> Result<(PolicyParams<F>, Vec<SftStepRecord>)> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::InvalidArgument("run_sft needs at least one trace".into()));
    }
    let mut params = params.clone();
    let per_epoch = traces.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut curve = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..traces.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::seeded(cfg.seed, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<TokenId>, Vec<TokenId>)> =
                chunk.iter().map(|&i| (traces[i].context.clone(), traces[i].target.clone())).collect();
            let lr = scheduled_lr(cfg.lr_schedule, cfg.learning_rate, cfg.warmup_ratio, step, total);
            let loss = sft_step(&mut params, &batch, &mut optimizer, lr, cfg.max_grad_norm)?;
            curve.push(SftStepRecord { step, epoch, lr, loss: to_f64(loss) });
            step += 1;
        }
    }
    Ok((params, curve))
}
