//! Evaluation metrics and training analyses.
//!
//! Everything here is read-only over parameters, task suites and run logs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{render_prompts, GoldTarget, TaskInstance, TaskKind, TokenId, Vocab, LABELS, MAX_NUMBER};
use crate::error::{Error, Result};
use crate::grpo::StepRecord;
use crate::policy::{sample, teacher_forced_logits, PolicyParams, SamplerConfig};
use crate::rewards::legal::squash_ws;
use crate::rewards::{f1_score, first_number, parse_label_set, parse_structured_output};
use crate::scalar::{to_f64, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryConfig {
    /// Token budget for greedy evaluation replies.
    pub max_new_tokens: usize,
    /// Relative band within which a numeric-distance prediction counts as correct.
    pub numeric_band: f64,
    /// Tokens treated as domain tokens for prominence. Empty selects the
    /// label inventory plus all number tokens.
    pub marked_tokens: Vec<String>,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self { max_new_tokens: 48, numeric_band: 0.05, marked_tokens: Vec::new() }
    }
}

impl TelemetryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::Config("telemetry.max_new_tokens must be positive".into()));
        }
        if !(self.numeric_band >= 0.0 && self.numeric_band.is_finite()) {
            return Err(Error::Config(format!("telemetry.numeric_band must be >= 0, got {}", self.numeric_band)));
        }
        Ok(())
    }

    /// Resolves the marked lexicon against `vocab`.
    pub fn marked_ids(&self, vocab: &Vocab) -> Result<BTreeSet<TokenId>> {
        if self.marked_tokens.is_empty() {
            let numbers = (0..=MAX_NUMBER).map(|n| n.to_string());
            return LABELS.iter().map(|s| s.to_string()).chain(numbers).map(|t| vocab.id(&t)).collect();
        }
        self.marked_tokens.iter().map(|t| vocab.id(t)).collect()
    }
}

/// `|pred ∩ gold| / |pred ∪ gold|`, 0 when both are empty.
pub fn jaccard(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    let union = pred.union(gold).count();
    if union == 0 {
        return 0.0;
    }
    pred.intersection(gold).count() as f64 / union as f64
}

/// Greedy reply to one evaluation task and its per-instance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub task_id: String,
    pub kind: TaskKind,
    pub response: Vec<TokenId>,
    pub response_len: usize,
    pub answer: Option<String>,
    pub correct: bool,
    /// F1 for multi-label tasks, otherwise 1 when correct and 0 when not.
    pub score: f64,
    /// Set for multi-label tasks only.
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub count: usize,
    pub accuracy: f64,
    /// Macro-averaged over instances; multi-label tasks only.
    pub f1: Option<f64>,
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub mode: Option<String>,
    pub total: usize,
    pub accuracy: f64,
    pub per_kind: BTreeMap<TaskKind, KindMetrics>,
}

/// Scores one reply against its task.
pub fn score_output(task: &TaskInstance, response: Vec<TokenId>, vocab: &Vocab, cfg: &TelemetryConfig) -> EvalOutput {
    let parsed = parse_structured_output(&response, &vocab.tags());
    let answer = parsed.answer_span().map(|a| vocab.decode(a));
    let text = answer.clone().unwrap_or_default();
    let (correct, score, jac) = match &task.gold {
        GoldTarget::LabelSet(gold) => {
            let pred = parse_label_set(&text);
            (pred == *gold, f1_score::<f64>(&pred, gold), Some(jaccard(&pred, gold)))
        }
        GoldTarget::Number(truth) if task.kind == TaskKind::NumericDistance => {
            let ok = match first_number(&text) {
                Some(p) => (p as f64 - *truth as f64).abs() <= cfg.numeric_band * *truth as f64,
                None => false,
            };
            (ok, if ok { 1.0 } else { 0.0 }, None)
        }
        gold => {
            let ok = answer.is_some() && squash_ws(&text) == squash_ws(&gold.canonical());
            (ok, if ok { 1.0 } else { 0.0 }, None)
        }
    };
    EvalOutput {
        task_id: task.id.clone(),
        kind: task.kind,
        response_len: response.len(),
        response,
        answer,
        correct,
        score,
        jaccard: jac,
    }
}

/// Aggregates per-instance outputs into a report.
pub fn summarize(outputs: &[EvalOutput], checkpoint_id: &str, mode: Option<&str>) -> EvalReport {
    let mut per_kind = BTreeMap::new();
    for kind in TaskKind::ALL {
        let rows: Vec<&EvalOutput> = outputs.iter().filter(|o| o.kind == kind).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let accuracy = rows.iter().filter(|o| o.correct).count() as f64 / n;
        let (f1, jac) = if kind == TaskKind::MultiLabel {
            (
                Some(rows.iter().map(|o| o.score).sum::<f64>() / n),
                Some(rows.iter().map(|o| o.jaccard.unwrap_or(0.0)).sum::<f64>() / n),
            )
        } else {
            (None, None)
        };
        per_kind.insert(kind, KindMetrics { count: rows.len(), accuracy, f1, jaccard: jac });
    }
    let accuracy = if outputs.is_empty() {
        0.0
    } else {
        outputs.iter().filter(|o| o.correct).count() as f64 / outputs.len() as f64
    };
    EvalReport {
        checkpoint_id: checkpoint_id.to_string(),
        mode: mode.map(String::from),
        total: outputs.len(),
        accuracy,
        per_kind,
    }
}

/// Greedy replies from the reasoning-mode context for every task.
pub fn evaluate<F: Scalar>(
    params: &PolicyParams<F>,
    suite: &[TaskInstance],
    vocab: &Vocab,
    cfg: &TelemetryConfig,
    checkpoint_id: &str,
    mode: Option<&str>,
) -> Result<(EvalReport, Vec<EvalOutput>)> {
    cfg.validate()?;
    if suite.is_empty() {
        return Err(Error::InvalidArgument("evaluation suite is empty".into()));
    }
    let sampler = SamplerConfig::greedy(cfg.max_new_tokens, Some(vocab.eos()));
    let outputs = suite
        .par_iter()
        .map(|task| {
            let ctx = render_prompts(task, vocab).reasoning_context_prefix;
            let response = sample(params, &ctx, &sampler)?;
            Ok(score_output(task, response, vocab, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&outputs, checkpoint_id, mode), outputs))
}

/// Mean realized logit at positions holding a marked token minus the mean
/// realized logit over all scored positions. Every token after the first is
/// scored, teacher-forced.
pub fn token_prominence<F: Scalar>(
    params: &PolicyParams<F>,
    sequence: &[TokenId],
    marked: &BTreeSet<TokenId>,
) -> Result<f64> {
    if sequence.len() < 2 || !sequence[1..].iter().any(|t| marked.contains(t)) {
        return Err(Error::InvalidArgument("prominence needs a marked token after the first position".into()));
    }
    let scores = teacher_forced_logits(params, &sequence[..1], &sequence[1..])?;
    let logits: Vec<f64> = scores.iter().map(|s| to_f64(s.logit)).collect();
    let all = logits.iter().sum::<f64>() / logits.len() as f64;
    let hits: Vec<f64> = sequence[1..].iter().zip(&logits).filter(|(t, _)| marked.contains(t)).map(|(_, &l)| l).collect();
    Ok(hits.iter().sum::<f64>() / hits.len() as f64 - all)
}

/// Perplexity of the gold answer teacher-forced after
/// `reasoning-context <reasoning> SPAN </reasoning> <answer>`.
pub fn reasoning_quality_ppl<F: Scalar>(
    scorer: &PolicyParams<F>,
    task: &TaskInstance,
    vocab: &Vocab,
    reasoning_span: &[TokenId],
) -> Result<f64> {
    let gold = task.gold.canonical_tokens(vocab)?;
    let ctx = render_prompts(task, vocab).reasoning_answer_context(reasoning_span);
    let scores = teacher_forced_logits(scorer, &ctx, &gold)?;
    let nll = -scores.iter().map(|s| to_f64(s.logprob())).sum::<f64>() / scores.len() as f64;
    Ok(nll.exp())
}

/// Per-step quantities tracked during GRPO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: usize,
    pub direct_logit: f64,
    pub reasoning_logit: f64,
    pub reward_mean: f64,
    pub reward_variance: f64,
    pub mean_legal: f64,
    pub mean_dq: f64,
    pub mean_modulation: f64,
}

impl ProbeRecord {
    pub fn from_step(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            direct_logit: r.stats.direct_logit,
            reasoning_logit: r.stats.reasoning_logit,
            reward_mean: r.stats.mean_reward,
            reward_variance: r.stats.reward_std * r.stats.reward_std,
            mean_legal: r.stats.mean_legal,
            mean_dq: r.stats.mean_dq,
            mean_modulation: r.stats.mean_modulation,
        }
    }
}

pub fn probes(log: &[StepRecord]) -> Vec<ProbeRecord> {
    log.iter().map(ProbeRecord::from_step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub first_step: usize,
    pub last_step: usize,
    pub mean_dq: f64,
    pub mean_legal: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub stages: Vec<StageSummary>,
    /// Pearson correlation of per-step mean differential and mean legal reward.
    pub pearson_r: f64,
    /// Set when either series has zero variance; `pearson_r` is then 0.
    pub degenerate: bool,
}

/// Pearson correlation, or `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Splits the run into three stages of equal step count (earlier stages take
/// the remainder) and correlates differential with legal reward over all steps.
pub fn correlation_report(probes: &[ProbeRecord]) -> Result<CorrelationReport> {
    let n = probes.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("correlation needs at least 3 steps, got {n}")));
    }
    let mut stages = Vec::with_capacity(3);
    let mut start = 0;
    for s in 0..3 {
        let len = n / 3 + usize::from(s < n % 3);
        let rows = &probes[start..start + len];
        let m = |f: fn(&ProbeRecord) -> f64| rows.iter().map(f).sum::<f64>() / len as f64;
        stages.push(StageSummary {
            stage: s,
            first_step: rows[0].step,
            last_step: rows[len - 1].step,
            mean_dq: m(|p| p.mean_dq),
            mean_legal: m(|p| p.mean_legal),
            mean_reward: m(|p| p.reward_mean),
        });
        start += len;
    }
    let dq: Vec<f64> = probes.iter().map(|p| p.mean_dq).collect();
    let legal: Vec<f64> = probes.iter().map(|p| p.mean_legal).collect();
    let r = pearson(&dq, &legal);
    Ok(CorrelationReport { stages, pearson_r: r.unwrap_or(0.0), degenerate: r.is_none() })
}

/// Per-step reward variance of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSeries {
    pub run: String,
    pub mode: String,
    pub steps: Vec<usize>,
    pub variance: Vec<f64>,
    pub mean_variance: f64,
}

pub fn variance_series(run: &str, log: &[StepRecord]) -> VarianceSeries {
    let p = probes(log);
    let variance: Vec<f64> = p.iter().map(|r| r.reward_variance).collect();
    let mean_variance = if variance.is_empty() { 0.0 } else { variance.iter().sum::<f64>() / variance.len() as f64 };
    VarianceSeries {
        run: run.to_string(),
        mode: log.first().map(|r| r.mode.as_str().to_string()).unwrap_or_default(),
        steps: p.iter().map(|r| r.step).collect(),
        variance,
        mean_variance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub bucket: String,
    pub run: String,
    pub count: usize,
    pub mean_length: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthTable {
    /// Baseline median length; `Short` holds lengths at or below it.
    pub median: f64,
    pub degenerate: bool,
    pub rows: Vec<LengthRow>,
}

/// Buckets tasks by the baseline run's reply length and reports mean length
/// and mean score per bucket for both runs. Tasks are paired by id; a task
/// missing from `candidate` is skipped for that run.
pub fn length_score_table(baseline: &[EvalOutput], candidate: &[EvalOutput]) -> LengthTable {
    let mut lens: Vec<f64> = baseline.iter().map(|o| o.response_len as f64).collect();
    lens.sort_by(f64::total_cmp);
    let median = match lens.len() {
        0 => 0.0,
        n if n % 2 == 1 => lens[n / 2],
        n => 0.5 * (lens[n / 2 - 1] + lens[n / 2]),
    };
    let short = |o: &EvalOutput| o.response_len as f64 <= median;
    let degenerate = baseline.iter().all(short) || !baseline.iter().any(short);
    let bucket_of: HashMap<&str, &'static str> = baseline
        .iter()
        .map(|o| (o.task_id.as_str(), if degenerate { "All" } else if short(o) { "Short" } else { "Long" }))
        .collect();
    let buckets: &[&str] = if degenerate { &["All"] } else { &["Short", "Long"] };
    let mut rows = Vec::new();
    for &bucket in buckets {
        for (run, outs) in [("baseline", baseline), ("candidate", candidate)] {
            let sel: Vec<&EvalOutput> =
                outs.iter().filter(|o| bucket_of.get(o.task_id.as_str()) == Some(&bucket)).collect();
            let n = sel.len();
            let avg = |f: fn(&EvalOutput) -> f64| if n == 0 { 0.0 } else { sel.iter().map(|o| f(o)).sum::<f64>() / n as f64 };
            rows.push(LengthRow {
                bucket: bucket.to_string(),
                run: run.to_string(),
                count: n,
                mean_length: avg(|o| o.response_len as f64),
                mean_score: avg(|o| o.score),
            });
        }
    }
    LengthTable { median, degenerate, rows }
}
