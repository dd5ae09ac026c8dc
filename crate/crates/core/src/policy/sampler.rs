use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::forward;
use super::params::PolicyParams;
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{to_f64, Scalar};

/// Decoding settings. `temperature == 0` selects greedy argmax decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Generation stops after emitting this token.
    #[serde(default)]
    pub stop_token: Option<TokenId>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.9,
            top_p: 0.9,
            max_new_tokens: 48,
            seed: 0,
            stop_token: None,
        }
    }
}

impl SamplerConfig {
    pub fn greedy(max_new_tokens: usize, stop_token: Option<TokenId>) -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_new_tokens,
            seed: 0,
            stop_token,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("sampler.temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("sampler.top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("sampler.max_new_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }
}

/// Autoregressive generation seeded from `cfg.seed`.
pub fn sample<F: Scalar>(params: &PolicyParams<F>, context: &[TokenId], cfg: &SamplerConfig) -> Result<Vec<TokenId>> {
    let mut r = rng::seeded(cfg.seed, 0);
    sample_with_rng(params, context, cfg, &mut r)
}

pub fn sample_with_rng<F: Scalar>(
    params: &PolicyParams<F>,
    context: &[TokenId],
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Vec<TokenId>> {
    cfg.validate()?;
    if context.is_empty() {
        return Err(Error::InvalidArgument("sampling needs a non-empty context".into()));
    }
    let max_len = params.config().max_len;
    let mut seq = context.to_vec();
    let mut generated = Vec::new();
    while generated.len() < cfg.max_new_tokens && seq.len() < max_len {
        let out = forward(params, &seq)?;
        let logits: Vec<f64> = out.last_logits().iter().map(|&x| to_f64(x)).collect();
        let tok = next_token(&logits, cfg, rng);
        generated.push(tok);
        seq.push(tok);
        if Some(tok) == cfg.stop_token {
            break;
        }
    }
    Ok(generated)
}

/// Draws one token from temperature-scaled, nucleus-truncated logits.
pub fn next_token(logits: &[f64], cfg: &SamplerConfig, rng: &mut impl Rng) -> TokenId {
    if cfg.is_greedy() {
        return argmax(logits);
    }
    let dist = nucleus_distribution(logits, cfg.temperature, cfg.top_p);
    let mut u: f64 = rng.random::<f64>();
    for &(tok, p) in &dist {
        if u < p {
            return tok;
        }
        u -= p;
    }
    dist.last().expect("non-empty nucleus").0
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// The renormalized nucleus: smallest prefix of tokens (by descending
/// probability, ties by id) whose mass reaches `top_p`.
pub fn nucleus_distribution(logits: &[f64], temperature: f64, top_p: f64) -> Vec<(TokenId, f64)> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut order: Vec<(TokenId, f64)> = exps.iter().map(|e| e / z).enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = 0;
    for &(_, p) in &order {
        cum += p;
        keep += 1;
        if cum >= top_p {
            break;
        }
    }
    order.truncate(keep);
    let mass: f64 = order.iter().map(|x| x.1).sum();
    for x in &mut order {
        x.1 /= mass;
    }
    order
}
