//! Reinforcement learning with chain-of-thought information-gain rewards.
//!
//! A small decoder-only policy is first fit to oracle reasoning traces, then
//! optimized with group-relative policy optimization. Each sampled reply is
//! rewarded with `R = R_format + R_legal * sigmoid(dQ * T)`, where `dQ` is the
//! mean teacher-forced answer logit after the reply's own reasoning minus the
//! same quantity under a direct-answer prompt.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the scalar for the common case.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod grpo;
pub mod io;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod scalar;
pub mod sft;
pub mod telemetry;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Params = policy::PolicyParams<f64>;
pub type Params32 = policy::PolicyParams<f32>;
pub type Snapshot = policy::ReferenceSnapshot<f64>;
pub type Breakdown = rewards::RewardBreakdown<f64>;
