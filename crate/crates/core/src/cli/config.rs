//! Run configuration: a TOML file whose keys may be written as dotted paths
//! (`sft.learning_rate = 5e-5`) or as tables. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{KindCounts, TaskKind};
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::policy::{ModelConfig, OptimizerKind, SamplerConfig};
use crate::rewards::{DistanceRewardConfig, InfoGainConfig, RewardMode};
use crate::sft::{LrSchedule, SftConfig};
use crate::telemetry::TelemetryConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Task counts per kind for the training suite and its traces.
    pub train_counts: KindCounts,
    pub eval_counts: KindCounts,
    /// Added to the run seed to draw the evaluation suite.
    pub eval_seed_offset: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            train_counts: [(TaskKind::NumericExact, 450)].into_iter().collect(),
            eval_counts: [(TaskKind::NumericExact, 100)].into_iter().collect(),
            eval_seed_offset: 1,
        }
    }
}

/// Architecture; the vocabulary size always comes from the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
    pub init_std: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { d_model: 32, n_layers: 2, n_heads: 4, max_len: 64, ffn_mult: 4, init_std: 0.02 }
    }
}

impl PolicySection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_len: self.max_len,
            ffn_mult: self.ffn_mult,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self { temperature: s.temperature, top_p: s.top_p, max_new_tokens: s.max_new_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub warmup_ratio: f64,
    pub optimizer: OptimizerKind,
    pub max_grad_norm: Option<f64>,
}

impl Default for SftSection {
    fn default() -> Self {
        let d = SftConfig::default();
        Self {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            lr_schedule: d.lr_schedule,
            warmup_ratio: d.warmup_ratio,
            optimizer: d.optimizer,
            max_grad_norm: d.max_grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoSection {
    pub group_size: usize,
    pub kl_beta: f64,
    pub advantage_epsilon: f64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_ratio: f64,
    pub steps: usize,
    pub grad_clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub snapshot_interval: usize,
    pub checkpoint_every: usize,
}

impl Default for GrpoSection {
    fn default() -> Self {
        let d = GrpoConfig::default();
        Self {
            group_size: d.group_size,
            kl_beta: d.kl_beta,
            advantage_epsilon: d.advantage_epsilon,
            learning_rate: d.learning_rate,
            lr_schedule: d.lr_schedule,
            warmup_ratio: d.warmup_ratio,
            steps: d.steps,
            grad_clip_norm: d.grad_clip_norm,
            optimizer: d.optimizer,
            snapshot_interval: d.snapshot_interval,
            checkpoint_every: d.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardsSection {
    /// Modulation temperature applied to the differential.
    pub temperature: f64,
    /// Scale of the numeric distance reward.
    pub c: f64,
    pub mode: RewardMode,
}

impl Default for RewardsSection {
    fn default() -> Self {
        let i = InfoGainConfig::default();
        Self { temperature: i.temperature, c: DistanceRewardConfig::default().c, mode: i.mode }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Artifact directory, overridden by `--out`.
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub policy: PolicySection,
    pub sampler: SamplerSection,
    pub sft: SftSection,
    pub grpo: GrpoSection,
    pub rewards: RewardsSection,
    pub telemetry: TelemetryConfig,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing { what: "config file", path: path.to_path_buf() },
            _ => Error::io(path, e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.train_counts.values().all(|&n| n == 0) {
            return Err(Error::Config("corpus.train_counts must request at least one task".into()));
        }
        if self.corpus.eval_counts.values().all(|&n| n == 0) {
            return Err(Error::Config("corpus.eval_counts must request at least one task".into()));
        }
        if !(self.policy.init_std >= 0.0 && self.policy.init_std.is_finite()) {
            return Err(Error::Config(format!("policy.init_std must be >= 0, got {}", self.policy.init_std)));
        }
        // Vocabulary size does not affect the remaining architecture checks.
        self.policy.model_config(1).validate().map_err(|e| Error::Config(format!("policy: {e}")))?;
        self.sampler_config().validate()?;
        self.sft_config().validate()?;
        self.grpo_config(self.rewards.mode, None).validate()?;
        self.info_config(self.rewards.mode).validate()?;
        self.dist_config().validate()?;
        self.telemetry.validate()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            temperature: self.sampler.temperature,
            top_p: self.sampler.top_p,
            max_new_tokens: self.sampler.max_new_tokens,
            seed: self.seed,
            stop_token: None,
        }
    }

    pub fn sft_config(&self) -> SftConfig {
        let s = &self.sft;
        SftConfig {
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            epochs: s.epochs,
            lr_schedule: s.lr_schedule,
            warmup_ratio: s.warmup_ratio,
            seed: self.seed,
            optimizer: s.optimizer,
            max_grad_norm: s.max_grad_norm,
        }
    }

    /// GRPO settings for `mode`, with `steps` overriding the configured count.
    pub fn grpo_config(&self, mode: RewardMode, steps: Option<usize>) -> GrpoConfig {
        let g = &self.grpo;
        GrpoConfig {
            group_size: g.group_size,
            kl_beta: g.kl_beta,
            advantage_epsilon: g.advantage_epsilon,
            learning_rate: g.learning_rate,
            lr_schedule: g.lr_schedule,
            warmup_ratio: g.warmup_ratio,
            steps: steps.unwrap_or(g.steps),
            grad_clip_norm: g.grad_clip_norm,
            mode,
            seed: self.seed,
            optimizer: g.optimizer,
            snapshot_interval: g.snapshot_interval,
            checkpoint_every: g.checkpoint_every,
            sampler: self.sampler_config(),
        }
    }

    pub fn info_config(&self, mode: RewardMode) -> InfoGainConfig {
        InfoGainConfig { temperature: self.rewards.temperature, mode }
    }

    pub fn dist_config(&self) -> DistanceRewardConfig {
        DistanceRewardConfig { c: self.rewards.c }
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 characters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}
