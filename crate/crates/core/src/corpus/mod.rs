//! Synthetic task families, the closed vocabulary, dual-mode prompt
//! templates and oracle-written supervised traces.

mod tasks;
mod templates;
mod traces;
mod vocab;

use serde::{Deserialize, Serialize};

pub use tasks::{generate_task_suite, oracle_solve, GoldTarget, KindCounts, TaskInstance, TaskKind};
pub use templates::{render_prompts, PromptPair};
pub use traces::{generate_sft_traces, SftTrace};
pub use vocab::{TagIds, TokenId, Vocab, FACTS, LABELS, MAX_NUMBER, OPTION_LETTERS};

use crate::error::Result;

/// On-disk form of a task: `{id, kind, prompt, gold}` with text fields as
/// space-separated vocabulary tokens and `gold` in canonical rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    pub prompt: String,
    pub gold: String,
}

/// On-disk form of a trace: `{id, kind, context, target}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub id: String,
    pub kind: TaskKind,
    pub context: String,
    pub target: String,
}

impl TaskRecord {
    pub fn from_task(t: &TaskInstance, vocab: &Vocab) -> Self {
        Self {
            id: t.id.clone(),
            kind: t.kind,
            prompt: vocab.decode(&t.prompt_tokens),
            gold: t.gold.canonical(),
        }
    }

    pub fn to_task(&self, vocab: &Vocab) -> Result<TaskInstance> {
        let t = TaskInstance {
            id: self.id.clone(),
            kind: self.kind,
            prompt_tokens: vocab.encode(&self.prompt)?,
            gold: GoldTarget::parse(self.kind, &self.gold)?,
        };
        t.validate(vocab)?;
        Ok(t)
    }
}

impl TraceRecord {
    pub fn from_trace(t: &SftTrace, vocab: &Vocab) -> Self {
        Self {
            id: t.task_id.clone(),
            kind: t.kind,
            context: vocab.decode(&t.context),
            target: vocab.decode(&t.target),
        }
    }

    pub fn to_trace(&self, vocab: &Vocab) -> Result<SftTrace> {
        Ok(SftTrace {
            task_id: self.id.clone(),
            kind: self.kind,
            context: vocab.encode(&self.context)?,
            target: vocab.encode(&self.target)?,
        })
    }
}
