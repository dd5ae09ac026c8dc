use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{TagIds, TokenId};

/// Which structural properties a reply satisfied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatFlags {
    pub reasoning_open: bool,
    pub reasoning_close: bool,
    pub answer_open: bool,
    pub answer_close: bool,
    /// An opening reasoning tag whose next tag is the matching close.
    pub reasoning_paired: bool,
    pub answer_paired: bool,
    /// Both blocks paired and the answer block follows the reasoning block.
    pub ordered: bool,
    /// Every tag occurrence belongs to one of the selected blocks.
    pub no_stray_tags: bool,
}

impl FormatFlags {
    pub fn is_well_formed(&self) -> bool {
        self.reasoning_paired && self.answer_paired && self.ordered
    }
}

/// A reply split into `(reasoning, answer)`. Spans index into `raw_tokens`
/// and exclude the tags themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredOutput {
    pub raw_tokens: Vec<TokenId>,
    reasoning: Option<Range<usize>>,
    answer: Option<Range<usize>>,
    pub flags: FormatFlags,
    tags: TagIds,
}

impl StructuredOutput {
    pub fn reasoning_span(&self) -> Option<&[TokenId]> {
        self.reasoning.clone().map(|r| &self.raw_tokens[r])
    }

    pub fn answer_span(&self) -> Option<&[TokenId]> {
        self.answer.clone().map(|r| &self.raw_tokens[r])
    }

    pub fn reasoning_range(&self) -> Option<Range<usize>> {
        self.reasoning.clone()
    }

    pub fn answer_range(&self) -> Option<Range<usize>> {
        self.answer.clone()
    }

    /// Canonical token form: the extracted blocks with their tags, in their
    /// original relative order, without leading or trailing tokens.
    pub fn reconstruct(&self) -> Vec<TokenId> {
        let t = self.tags;
        let mut blocks: Vec<(usize, Vec<TokenId>)> = Vec::new();
        if let Some(r) = &self.reasoning {
            let mut b = vec![t.reasoning_open];
            b.extend_from_slice(&self.raw_tokens[r.clone()]);
            b.push(t.reasoning_close);
            blocks.push((r.start, b));
        }
        if let Some(r) = &self.answer {
            let mut b = vec![t.answer_open];
            b.extend_from_slice(&self.raw_tokens[r.clone()]);
            b.push(t.answer_close);
            blocks.push((r.start, b));
        }
        blocks.sort_by_key(|b| b.0);
        blocks.into_iter().flat_map(|b| b.1).collect()
    }
}

/// First `open` whose next tag token is `close`; returns the open and close positions.
fn first_block(raw: &[TokenId], tags: &TagIds, open: TokenId, close: TokenId) -> Option<(usize, usize)> {
    raw.iter().enumerate().filter(|(_, &t)| t == open).find_map(|(i, _)| {
        let j = raw[i + 1..].iter().position(|&t| tags.is_tag(t))? + i + 1;
        (raw[j] == close).then_some((i, j))
    })
}

/// Total parser for `[lead] <reasoning> R </reasoning> <answer> A </answer> [trail]`.
/// Malformed input only clears flags.
pub fn parse_structured_output(raw_tokens: &[TokenId], tags: &TagIds) -> StructuredOutput {
    let has = |x| raw_tokens.contains(&x);
    let rb = first_block(raw_tokens, tags, tags.reasoning_open, tags.reasoning_close);
    let ab = first_block(raw_tokens, tags, tags.answer_open, tags.answer_close);
    let tag_count = raw_tokens.iter().filter(|&&t| tags.is_tag(t)).count();
    let selected = 2 * (rb.is_some() as usize + ab.is_some() as usize);
    let flags = FormatFlags {
        reasoning_open: has(tags.reasoning_open),
        reasoning_close: has(tags.reasoning_close),
        answer_open: has(tags.answer_open),
        answer_close: has(tags.answer_close),
        reasoning_paired: rb.is_some(),
        answer_paired: ab.is_some(),
        ordered: matches!((rb, ab), (Some((_, rc)), Some((ao, _))) if ao > rc),
        no_stray_tags: tag_count == selected,
    };
    StructuredOutput {
        raw_tokens: raw_tokens.to_vec(),
        reasoning: rb.map(|(o, c)| o + 1..c),
        answer: ab.map(|(o, c)| o + 1..c),
        flags,
        tags: *tags,
    }
}

/// Half credit for a paired reasoning block, half for a paired answer block
/// that does not precede it.
pub fn format_reward(s: &StructuredOutput) -> f64 {
    let f = &s.flags;
    let reasoning = if f.reasoning_paired { 0.5 } else { 0.0 };
    let answer = if f.answer_paired && (!f.reasoning_paired || f.ordered) { 0.5 } else { 0.0 };
    reasoning + answer
}
