use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const REASONING_OPEN: &str = "<reasoning>";
pub const REASONING_CLOSE: &str = "</reasoning>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Fact words; fact `i` implies label `i`.
pub const FACTS: [&str; 8] = [
    "took", "lied", "hit", "burned", "paid", "copied", "smuggled", "broke",
];
pub const LABELS: [&str; 8] = [
    "theft",
    "fraud",
    "assault",
    "arson",
    "bribery",
    "forgery",
    "trafficking",
    "vandalism",
];
pub const OPTION_LETTERS: [&str; 4] = ["A", "B", "C", "D"];

/// Largest integer that has its own token.
pub const MAX_NUMBER: u64 = 99;

const WORDS: [&str; 27] = [
    "mode", "direct", "reason", "format", "query", ":", "charges", "penalty", "choice",
    "amount", "facts", "items", "options", "+", ",", "given", "known", "implies", "means",
    "add", "sum", "so", "thus", "hence", "pick", "total", "=",
];

/// Token ids of the four structural tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagIds {
    pub reasoning_open: TokenId,
    pub reasoning_close: TokenId,
    pub answer_open: TokenId,
    pub answer_close: TokenId,
}

impl TagIds {
    pub fn is_tag(&self, t: TokenId) -> bool {
        t == self.reasoning_open
            || t == self.reasoning_close
            || t == self.answer_open
            || t == self.answer_close
    }
}

/// Closed word-level vocabulary. Ids are dense `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        for required in [PAD, BOS, EOS, REASONING_OPEN, REASONING_CLOSE, ANSWER_OPEN, ANSWER_CLOSE] {
            if !index.contains_key(required) {
                return Err(Error::InvalidArgument(format!("vocabulary lacks {required}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// The synthetic task vocabulary used throughout the pipeline.
    pub fn standard() -> Self {
        let mut toks: Vec<String> = [PAD, BOS, EOS, REASONING_OPEN, REASONING_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
            .iter()
            .map(|s| s.to_string())
            .collect();
        toks.extend(WORDS.iter().map(|s| s.to_string()));
        toks.extend(OPTION_LETTERS.iter().map(|s| s.to_string()));
        toks.extend(FACTS.iter().map(|s| s.to_string()));
        toks.extend(LABELS.iter().map(|s| s.to_string()));
        toks.extend((0..=MAX_NUMBER).map(|n| n.to_string()));
        Self::from_tokens(toks).expect("standard vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<TokenId> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// Id of a token the caller knows is present.
    pub fn expect_id(&self, token: &str) -> TokenId {
        self.index[token]
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn bos(&self) -> TokenId {
        self.expect_id(BOS)
    }

    pub fn eos(&self) -> TokenId {
        self.expect_id(EOS)
    }

    pub fn pad(&self) -> TokenId {
        self.expect_id(PAD)
    }

    pub fn tags(&self) -> TagIds {
        TagIds {
            reasoning_open: self.expect_id(REASONING_OPEN),
            reasoning_close: self.expect_id(REASONING_CLOSE),
            answer_open: self.expect_id(ANSWER_OPEN),
            answer_close: self.expect_id(ANSWER_CLOSE),
        }
    }

    pub fn number(&self, n: u64) -> Option<TokenId> {
        self.index.get(&n.to_string()).copied()
    }

    /// Whitespace-separated tokens to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Ids to a single-space-joined string. Out-of-range ids render as `<unk:ID>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| match self.token(i) {
                Some(t) => t.to_string(),
                None => format!("<unk:{i}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, in id order.
    pub fn to_list_file(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_list_file(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty() && !l.starts_with("#!")))
    }
}
