//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use infogain::grpo::{compute_advantages, rollout_group, surrogate_gradient, surrogate_objective, Environment, GrpoConfig, Scored};
use infogain::policy::{continuation_logprobs, grad_logprob, ModelConfig, PolicyParams, SamplerConfig};
use infogain::rewards::{FormatFlags, RewardBreakdown, RewardMode};
use infogain::rng;
use rand::seq::index::sample;
use rand::Rng;

pub fn tiny(v: usize) -> ModelConfig {
    ModelConfig { vocab_size: v, d_model: 8, n_layers: 1, n_heads: 2, max_len: 16, ffn_mult: 4 }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between `analytic` and a central difference of
/// `f` over `n_coords` randomly chosen coordinates.
pub fn worst_fd_error(
    p: &PolicyParams<f64>,
    analytic: &PolicyParams<f64>,
    f: impl Fn(&PolicyParams<f64>) -> f64,
    n_coords: usize,
    seed: u64,
) -> f64 {
    let mut r = rng::seeded(seed, 99);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in sample(&mut r, p.len(), n_coords.min(p.len())) {
        let mut plus = p.clone();
        plus.values_mut()[i] += h;
        let mut minus = p.clone();
        minus.values_mut()[i] -= h;
        let num = (f(&plus) - f(&minus)) / (2.0 * h);
        worst = worst.max(rel_err(analytic.values()[i], num));
    }
    worst
}

/// Log-likelihood gradient check on a random context and continuation.
pub fn logprob_fd_error(cfg: ModelConfig, seed: u64, n_coords: usize) -> f64 {
    let p = PolicyParams::<f64>::init(cfg, seed, 0.4).unwrap();
    let mut r = rng::seeded(seed, 5);
    let v = cfg.vocab_size;
    let ctx: Vec<usize> = (0..5).map(|_| r.random_range(0..v)).collect();
    let cont: Vec<usize> = (0..4).map(|_| r.random_range(0..v)).collect();
    let g = grad_logprob(&p, &ctx, &cont).unwrap();
    worst_fd_error(&p, &g, |q| continuation_logprobs(q, &ctx, &cont).unwrap().iter().sum(), n_coords, seed)
}

/// Rewards a reply by how often it uses token 3, so a group has spread.
pub struct CountEnv;

impl Environment<f64> for CountEnv {
    fn num_tasks(&self) -> usize {
        1
    }
    fn task_id(&self, _: usize) -> String {
        "count".into()
    }
    fn rollout_context(&self, _: usize) -> Vec<usize> {
        vec![1, 7, 2]
    }
    fn stop_token(&self) -> Option<usize> {
        None
    }
    fn score(&self, _: &PolicyParams<f64>, _: usize, reply: &[usize], _: RewardMode) -> Scored<f64> {
        let r = reply.iter().filter(|&&t| t == 3).count() as f64 + 0.1 * reply.len() as f64;
        Scored {
            structured: None,
            breakdown: RewardBreakdown {
                r_format: 0.0,
                r_legal: r,
                delta_q: 0.0,
                modulation: 0.0,
                r_info: 0.0,
                total: r,
                direct_logit: 0.0,
                reasoning_logit: 0.0,
                delta_q_degenerate: true,
                flags: FormatFlags::default(),
            },
        }
    }
}

/// Surrogate gradient check: trajectories are sampled from a snapshot, then
/// frozen, and the objective is differentiated at different live parameters
/// so the KL part contributes.
pub fn surrogate_fd_error(seed: u64, n_coords: usize, beta: f64) -> f64 {
    let snapshot = PolicyParams::<f64>::init(tiny(16), seed, 0.4).unwrap();
    let mut live = snapshot.clone();
    let mut r = rng::seeded(seed, 6);
    for x in live.values_mut() {
        *x += r.random_range(-0.05..0.05);
    }
    let cfg = GrpoConfig {
        kl_beta: beta,
        sampler: SamplerConfig { temperature: 1.0, top_p: 1.0, max_new_tokens: 5, ..SamplerConfig::default() },
        seed,
        ..GrpoConfig::default()
    };
    let groups: Vec<_> = (0..2)
        .map(|k| compute_advantages(rollout_group(&snapshot, &CountEnv, 0, &cfg, k).unwrap(), cfg.advantage_epsilon))
        .collect();
    let (g, _) = surrogate_gradient(&live, &groups, beta).unwrap();
    worst_fd_error(&live, &g, |q| surrogate_objective(q, &groups, beta).unwrap(), n_coords, seed)
}
