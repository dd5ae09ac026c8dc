use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::parse::StructuredOutput;
use crate::corpus::{GoldTarget, TaskInstance, TaskKind, Vocab};
use crate::error::{Error, Result};
use crate::scalar::{cst, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceRewardConfig {
    /// Log-distance normalization constant.
    pub c: f64,
}

impl Default for DistanceRewardConfig {
    fn default() -> Self {
        Self { c: 36.0 }
    }
}

impl DistanceRewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c > 0.0 && self.c.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("rewards.c must be positive, got {}", self.c)))
        }
    }
}

/// Comma-split, trimmed, deduplicated label prediction.
pub fn parse_label_set(answer: &str) -> BTreeSet<String> {
    answer
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// First maximal run of ASCII digits.
pub fn first_number(answer: &str) -> Option<u64> {
    let start = answer.find(|c: char| c.is_ascii_digit())?;
    let run: String = answer[start..].chars().take_while(char::is_ascii_digit).collect();
    run.parse().ok()
}

/// Harmonic mean of precision and recall; 0 when either set is empty.
pub fn f1_score<F: Scalar>(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> F {
    let hit = pred.intersection(gold).count();
    if hit == 0 {
        return F::zero();
    }
    let p = cst::<F>(hit as f64) / cst::<F>(pred.len() as f64);
    let r = cst::<F>(hit as f64) / cst::<F>(gold.len() as f64);
    cst::<F>(2.0) * p * r / (p + r)
}

/// `exp(-|ln pred - ln truth| / c)`.
pub fn distance_reward<F: Scalar>(pred: F, truth: F, c: F) -> F {
    let d = (pred.ln() - truth.ln()).abs();
    if d.is_nan() {
        return F::zero();
    }
    (-d / c).exp()
}

pub(crate) fn squash_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Task-kind specific correctness of the answer span in `[0, 1]`.
/// Missing or unparseable answers score 0.
pub fn legal_reward<F: Scalar>(s: &StructuredOutput, task: &TaskInstance, vocab: &Vocab, cfg: &DistanceRewardConfig) -> F {
    let Some(span) = s.answer_span() else {
        return F::zero();
    };
    let text = vocab.decode(span);
    match (&task.gold, task.kind) {
        (GoldTarget::LabelSet(gold), TaskKind::MultiLabel) => f1_score(&parse_label_set(&text), gold),
        (GoldTarget::Number(truth), TaskKind::NumericDistance) => match first_number(&text) {
            Some(pred) => distance_reward(cst::<F>(pred as f64), cst::<F>(*truth as f64), cst::<F>(cfg.c)),
            None => F::zero(),
        },
        (gold, TaskKind::MultipleChoice | TaskKind::NumericExact) => {
            if squash_ws(&text) == squash_ws(&gold.canonical()) {
                F::one()
            } else {
                F::zero()
            }
        }
        _ => F::zero(),
    }
}
