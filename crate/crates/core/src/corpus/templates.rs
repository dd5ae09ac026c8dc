use super::tasks::TaskInstance;
use super::vocab::{TokenId, Vocab};

/// Direct-mode and reasoning-mode contexts for one task.
///
/// Direct mode: `<bos> mode direct format <answer> </answer> query : PROMPT`.
/// Reasoning mode: `<bos> mode reason format <reasoning> </reasoning> <answer> </answer> query : PROMPT`.
/// The format stanza names the tags the reply must use; replies are generated
/// after the context and never include it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptPair {
    pub direct_context: Vec<TokenId>,
    pub reasoning_context_prefix: Vec<TokenId>,
    reasoning_open: TokenId,
    reasoning_close: TokenId,
    answer_open: TokenId,
}

impl PromptPair {
    /// Builds a pair from raw contexts; tag ids come from `vocab`.
    pub fn from_contexts(direct_context: Vec<TokenId>, reasoning_context_prefix: Vec<TokenId>, vocab: &Vocab) -> Self {
        let tags = vocab.tags();
        Self {
            direct_context,
            reasoning_context_prefix,
            reasoning_open: tags.reasoning_open,
            reasoning_close: tags.reasoning_close,
            answer_open: tags.answer_open,
        }
    }

    /// Conditioning for the answer in direct mode: the direct context plus
    /// the answer-opening tag.
    pub fn direct_answer_context(&self) -> Vec<TokenId> {
        let mut c = self.direct_context.clone();
        c.push(self.answer_open);
        c
    }

    /// Conditioning for the answer after a reasoning span:
    /// prefix `<reasoning>` SPAN `</reasoning>` `<answer>`.
    pub fn reasoning_answer_context(&self, reasoning_span: &[TokenId]) -> Vec<TokenId> {
        let mut c = Vec::with_capacity(self.reasoning_context_prefix.len() + reasoning_span.len() + 3);
        c.extend_from_slice(&self.reasoning_context_prefix);
        c.push(self.reasoning_open);
        c.extend_from_slice(reasoning_span);
        c.push(self.reasoning_close);
        c.push(self.answer_open);
        c
    }
}

pub fn render_prompts(task: &TaskInstance, vocab: &Vocab) -> PromptPair {
    let w = |s: &str| vocab.expect_id(s);
    let tags = vocab.tags();
    let mut direct = vec![vocab.bos(), w("mode"), w("direct"), w("format"), tags.answer_open, tags.answer_close, w("query"), w(":")];
    direct.extend_from_slice(&task.prompt_tokens);
    let mut reasoning = vec![
        vocab.bos(),
        w("mode"),
        w("reason"),
        w("format"),
        tags.reasoning_open,
        tags.reasoning_close,
        tags.answer_open,
        tags.answer_close,
        w("query"),
        w(":"),
    ];
    reasoning.extend_from_slice(&task.prompt_tokens);
    PromptPair::from_contexts(direct, reasoning, vocab)
}
