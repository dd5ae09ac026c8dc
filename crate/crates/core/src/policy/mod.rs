//! The trainable autoregressive policy: parameters, forward pass, teacher
//! forcing, exact gradients, decoding, optimizers and checkpoints.

mod checkpoint;
mod model;
mod optim;
mod params;
mod sampler;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    continuation_logprobs, forward, grad_logprob, teacher_forced_logits, weighted_logprob_grad, PolicyOutput,
    TokenScore,
};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradient, ModelConfig, PolicyParams, ReferenceSnapshot};
pub use sampler::{argmax, next_token, nucleus_distribution, sample, sample_with_rng, SamplerConfig};
