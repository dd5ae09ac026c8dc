//! Dual-mode logit differential and the confidence-modulated reward.
//!
//! The answer's score under a context is the mean raw logit of its realized
//! tokens under teacher forcing. `delta_q` is that score after the reasoning
//! span minus the score under the direct-mode context. Because
//! `logit = log p + log Z` at every position, the differential splits exactly
//! into a pointwise-mutual-information term and a log-partition term;
//! [`decomposition_check`] reports both along with the residual.

use serde::{Deserialize, Serialize};

use super::legal::{legal_reward, DistanceRewardConfig};
use super::parse::{format_reward, parse_structured_output, FormatFlags};
use crate::corpus::{PromptPair, TaskInstance, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::policy::{teacher_forced_logits, PolicyParams, TokenScore};
use crate::scalar::{cst, sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `total = r_format + r_legal * sigmoid(delta_q * T)`
    #[default]
    InfoGain,
    /// `total = r_format + r_legal`
    LegalOnly,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::InfoGain => "info_gain",
            RewardMode::LegalOnly => "legal_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "info_gain" => Some(RewardMode::InfoGain),
            "legal_only" => Some(RewardMode::LegalOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoGainConfig {
    /// Sensitivity `T` of the sigmoid modulation.
    pub temperature: f64,
    pub mode: RewardMode,
}

impl Default for InfoGainConfig {
    fn default() -> Self {
        Self { temperature: 0.2, mode: RewardMode::InfoGain }
    }
}

impl InfoGainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("rewards.temperature must be positive, got {}", self.temperature)))
        }
    }
}

/// Per-trajectory reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RewardBreakdown<F: Scalar> {
    pub r_format: F,
    pub r_legal: F,
    pub delta_q: F,
    pub modulation: F,
    pub r_info: F,
    pub total: F,
    /// Mean realized answer logit in direct mode (0 when unscored).
    pub direct_logit: F,
    /// Mean realized answer logit after the reasoning span (0 when unscored).
    pub reasoning_logit: F,
    /// Set when `delta_q` was defined as 0 because the answer was missing,
    /// empty, or could not be rescored.
    pub delta_q_degenerate: bool,
    pub flags: FormatFlags,
}

/// Answer-span score differential between the two modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaQ<F> {
    pub value: F,
    pub reasoning_logit: F,
    pub direct_logit: F,
    /// `value` is 0 by definition because the answer span was empty.
    pub empty_answer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition<F> {
    pub delta_q: F,
    /// Mean over answer positions of `log p(a | q, r) - log p(a | q)`.
    pub pmi_term: F,
    /// Mean over answer positions of `log Z(q, r) - log Z(q)`.
    pub logz_term: F,
    /// `delta_q - (pmi_term + logz_term)`.
    pub residual: F,
}

fn mean<F: Scalar>(xs: impl Iterator<Item = F>) -> F {
    let mut n = 0usize;
    let mut s = F::zero();
    for x in xs {
        s += x;
        n += 1;
    }
    s / cst::<F>(n as f64)
}

fn scores_under_both<F: Scalar>(
    params: &PolicyParams<F>,
    reasoning_context: &[TokenId],
    direct_context: &[TokenId],
    answer: &[TokenId],
) -> Result<(Vec<TokenScore<F>>, Vec<TokenScore<F>>)> {
    Ok((
        teacher_forced_logits(params, reasoning_context, answer)?,
        teacher_forced_logits(params, direct_context, answer)?,
    ))
}

/// Differential given the two full conditioning contexts (each already
/// ending with the answer-opening tag).
pub fn delta_q_from_contexts<F: Scalar>(
    params: &PolicyParams<F>,
    reasoning_context: &[TokenId],
    direct_context: &[TokenId],
    answer_span: &[TokenId],
) -> Result<DeltaQ<F>> {
    if answer_span.is_empty() {
        return Ok(DeltaQ { value: F::zero(), reasoning_logit: F::zero(), direct_logit: F::zero(), empty_answer: true });
    }
    let (r, d) = scores_under_both(params, reasoning_context, direct_context, answer_span)?;
    let reasoning_logit = mean(r.iter().map(|s| s.logit));
    let direct_logit = mean(d.iter().map(|s| s.logit));
    Ok(DeltaQ { value: reasoning_logit - direct_logit, reasoning_logit, direct_logit, empty_answer: false })
}

/// `delta_q` for a reply to the task rendered as `pair`. The answer is scored
/// after `prefix <reasoning> SPAN </reasoning> <answer>` and after
/// `direct_context <answer>`.
pub fn delta_q<F: Scalar>(
    params: &PolicyParams<F>,
    pair: &PromptPair,
    reasoning_span: &[TokenId],
    answer_span: &[TokenId],
) -> Result<DeltaQ<F>> {
    delta_q_from_contexts(
        params,
        &pair.reasoning_answer_context(reasoning_span),
        &pair.direct_answer_context(),
        answer_span,
    )
}

pub fn decomposition_check<F: Scalar>(
    params: &PolicyParams<F>,
    reasoning_context: &[TokenId],
    direct_context: &[TokenId],
    answer_span: &[TokenId],
) -> Result<Decomposition<F>> {
    if answer_span.is_empty() {
        return Err(Error::InvalidArgument("decomposition needs a non-empty answer span".into()));
    }
    let (r, d) = scores_under_both(params, reasoning_context, direct_context, answer_span)?;
    let delta_q = mean(r.iter().map(|s| s.logit)) - mean(d.iter().map(|s| s.logit));
    let pmi_term = mean(r.iter().zip(&d).map(|(a, b)| a.logprob() - b.logprob()));
    let logz_term = mean(r.iter().zip(&d).map(|(a, b)| a.log_z - b.log_z));
    Ok(Decomposition { delta_q, pmi_term, logz_term, residual: delta_q - (pmi_term + logz_term) })
}

/// Returns `(modulation, r_info)` with `modulation = sigmoid(dq * T)` and
/// `r_info = r_legal * modulation`, independent of mode.
pub fn info_reward<F: Scalar>(r_legal: F, dq: F, cfg: &InfoGainConfig) -> (F, F) {
    let m = sigmoid(dq * cst::<F>(cfg.temperature));
    (m, r_legal * m)
}

/// Composes parse, format, legal, differential and modulation for one
/// generated reply. `snapshot` is the policy that scores the differential.
pub fn score_trajectory<F: Scalar>(
    snapshot: &PolicyParams<F>,
    task: &TaskInstance,
    pair: &PromptPair,
    raw_tokens: &[TokenId],
    vocab: &Vocab,
    dist: &DistanceRewardConfig,
    info: &InfoGainConfig,
) -> RewardBreakdown<F> {
    let s = parse_structured_output(raw_tokens, &vocab.tags());
    let r_format = cst::<F>(format_reward(&s));
    let r_legal: F = legal_reward(&s, task, vocab, dist);
    let dq = match s.answer_span() {
        Some(ans) => delta_q(snapshot, pair, s.reasoning_span().unwrap_or(&[]), ans).ok(),
        None => None,
    };
    let (dq_value, rl, dl, degenerate) = match dq {
        Some(d) => (d.value, d.reasoning_logit, d.direct_logit, d.empty_answer),
        None => (F::zero(), F::zero(), F::zero(), true),
    };
    let (modulation, r_info) = info_reward(r_legal, dq_value, info);
    let total = match info.mode {
        RewardMode::InfoGain => r_format + r_info,
        RewardMode::LegalOnly => r_format + r_legal,
    };
    RewardBreakdown {
        r_format,
        r_legal,
        delta_q: dq_value,
        modulation,
        r_info,
        total,
        direct_logit: dl,
        reasoning_logit: rl,
        delta_q_degenerate: degenerate,
        flags: s.flags,
    }
}
