use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab, FACTS, LABELS, OPTION_LETTERS};
use crate::error::{Error, Result};
use crate::rng;

/// Task families. The reward rule is selected by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Set of labels implied by listed facts; scored by F1.
    MultiLabel,
    /// Aggregate quantity; scored by log-distance.
    NumericDistance,
    /// One of four options; exact match.
    MultipleChoice,
    /// Exact arithmetic result; exact match.
    NumericExact,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::MultiLabel,
        TaskKind::NumericDistance,
        TaskKind::MultipleChoice,
        TaskKind::NumericExact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::MultiLabel => "multi_label",
            TaskKind::NumericDistance => "numeric_distance",
            TaskKind::MultipleChoice => "multiple_choice",
            TaskKind::NumericExact => "numeric_exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Leading prompt word that introduces this kind.
    fn keyword(self) -> &'static str {
        match self {
            TaskKind::MultiLabel => "charges",
            TaskKind::NumericDistance => "penalty",
            TaskKind::MultipleChoice => "choice",
            TaskKind::NumericExact => "amount",
        }
    }

    fn short(self) -> &'static str {
        match self {
            TaskKind::MultiLabel => "ml",
            TaskKind::NumericDistance => "nd",
            TaskKind::MultipleChoice => "mc",
            TaskKind::NumericExact => "ne",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldTarget {
    LabelSet(BTreeSet<String>),
    Number(u64),
    Choice(String),
}

impl GoldTarget {
    /// Canonical answer rendering: sorted labels joined by ` , `, plain
    /// decimal digits, or a single option letter.
    pub fn canonical(&self) -> String {
        match self {
            GoldTarget::LabelSet(s) => s.iter().cloned().collect::<Vec<_>>().join(" , "),
            GoldTarget::Number(n) => n.to_string(),
            GoldTarget::Choice(c) => c.clone(),
        }
    }

    pub fn canonical_tokens(&self, vocab: &Vocab) -> Result<Vec<TokenId>> {
        vocab.encode(&self.canonical())
    }

    pub fn parse(kind: TaskKind, s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad {kind} gold {s:?}"));
        match kind {
            TaskKind::MultiLabel => {
                let set: BTreeSet<String> = s
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(String::from)
                    .collect();
                if set.is_empty() {
                    return Err(bad());
                }
                Ok(GoldTarget::LabelSet(set))
            }
            TaskKind::NumericDistance | TaskKind::NumericExact => {
                let n: u64 = s.trim().parse().map_err(|_| bad())?;
                if kind == TaskKind::NumericDistance && n == 0 {
                    return Err(bad());
                }
                Ok(GoldTarget::Number(n))
            }
            TaskKind::MultipleChoice => {
                let c = s.trim();
                if OPTION_LETTERS.contains(&c) {
                    Ok(GoldTarget::Choice(c.to_string()))
                } else {
                    Err(bad())
                }
            }
        }
    }

    fn matches_kind(&self, kind: TaskKind) -> bool {
        match (self, kind) {
            (GoldTarget::LabelSet(s), TaskKind::MultiLabel) => !s.is_empty(),
            (GoldTarget::Number(n), TaskKind::NumericDistance) => *n > 0,
            (GoldTarget::Number(_), TaskKind::NumericExact) => true,
            (GoldTarget::Choice(c), TaskKind::MultipleChoice) => OPTION_LETTERS.contains(&c.as_str()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub id: String,
    pub kind: TaskKind,
    pub prompt_tokens: Vec<TokenId>,
    pub gold: GoldTarget,
}

impl TaskInstance {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.prompt_tokens.is_empty() {
            return Err(Error::InvalidArgument(format!("task {} has an empty prompt", self.id)));
        }
        let tags = vocab.tags();
        if self.prompt_tokens.iter().any(|&t| tags.is_tag(t)) {
            return Err(Error::InvalidArgument(format!("task {} prompt contains a tag", self.id)));
        }
        if !self.gold.matches_kind(self.kind) {
            return Err(Error::InvalidArgument(format!(
                "task {} gold does not match kind {}",
                self.id, self.kind
            )));
        }
        Ok(())
    }
}

pub type KindCounts = BTreeMap<TaskKind, usize>;

/// Generates a deterministic synthetic suite. Kinds are emitted in
/// `TaskKind` order, each from its own RNG stream.
pub fn generate_task_suite(seed: u64, counts: &KindCounts, vocab: &Vocab) -> Vec<TaskInstance> {
    let mut out = Vec::new();
    for (&kind, &n) in counts {
        let mut rng = rng::seeded(seed, kind as u64);
        for i in 0..n {
            let (words, gold) = match kind {
                TaskKind::MultiLabel => gen_multi_label(&mut rng),
                TaskKind::NumericDistance => gen_numeric_distance(&mut rng),
                TaskKind::MultipleChoice => gen_multiple_choice(&mut rng),
                TaskKind::NumericExact => gen_numeric_exact(&mut rng),
            };
            let prompt_tokens = words.iter().map(|w| vocab.expect_id(w)).collect();
            out.push(TaskInstance {
                id: format!("{}-{seed}-{i:05}", kind.short()),
                kind,
                prompt_tokens,
                gold,
            });
        }
    }
    out
}

fn gen_multi_label(rng: &mut impl Rng) -> (Vec<String>, GoldTarget) {
    let k = rng.random_range(1..=3);
    let mut idx: Vec<usize> = (0..FACTS.len()).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    let mut words = vec![TaskKind::MultiLabel.keyword().to_string(), "facts".into()];
    words.extend(idx.iter().map(|&i| FACTS[i].to_string()));
    let gold = idx.iter().map(|&i| LABELS[i].to_string()).collect();
    (words, GoldTarget::LabelSet(gold))
}

fn gen_numeric_distance(rng: &mut impl Rng) -> (Vec<String>, GoldTarget) {
    let items: Vec<u64> = (0..3).map(|_| rng.random_range(1..=30)).collect();
    let mut words = vec![TaskKind::NumericDistance.keyword().to_string(), "items".into()];
    words.extend(items.iter().map(u64::to_string));
    (words, GoldTarget::Number(items.iter().sum()))
}

fn gen_multiple_choice(rng: &mut impl Rng) -> (Vec<String>, GoldTarget) {
    let fact = rng.random_range(0..FACTS.len());
    let mut distractors: Vec<usize> = (0..LABELS.len()).filter(|&l| l != fact).collect();
    distractors.shuffle(rng);
    let mut options = vec![fact];
    options.extend_from_slice(&distractors[..3]);
    options.shuffle(rng);
    let mut words = vec![
        TaskKind::MultipleChoice.keyword().to_string(),
        "facts".into(),
        FACTS[fact].to_string(),
        "options".into(),
    ];
    let mut gold = String::new();
    for (letter, &label) in OPTION_LETTERS.iter().zip(&options) {
        words.push(letter.to_string());
        words.push(LABELS[label].to_string());
        if label == fact {
            gold = letter.to_string();
        }
    }
    (words, GoldTarget::Choice(gold))
}

fn gen_numeric_exact(rng: &mut impl Rng) -> (Vec<String>, GoldTarget) {
    let a: u64 = rng.random_range(1..=9);
    let b: u64 = rng.random_range(1..=9);
    let words = vec![
        TaskKind::NumericExact.keyword().to_string(),
        a.to_string(),
        "+".into(),
        b.to_string(),
    ];
    (words, GoldTarget::Number(a + b))
}

/// Facts extracted from a prompt, plus the derived gold. Used both by the
/// solvability check and by the trace writer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Solution {
    Labels { facts: Vec<usize> },
    Sum { terms: Vec<u64> },
    Choice { fact: usize, letter: String },
}

impl Solution {
    pub(crate) fn gold(&self) -> GoldTarget {
        match self {
            Solution::Labels { facts } => {
                GoldTarget::LabelSet(facts.iter().map(|&f| LABELS[f].to_string()).collect())
            }
            Solution::Sum { terms } => GoldTarget::Number(terms.iter().sum()),
            Solution::Choice { letter, .. } => GoldTarget::Choice(letter.clone()),
        }
    }
}

/// Re-derives a task's answer by reading its prompt words only.
pub(crate) fn solve_prompt(words: &[&str]) -> Option<(TaskKind, Solution)> {
    let fact_index = |w: &str| FACTS.iter().position(|f| *f == w);
    let (&head, rest) = words.split_first()?;
    match head {
        "charges" => {
            let facts: Option<Vec<usize>> = rest.strip_prefix(&["facts"])?.iter().map(|w| fact_index(w)).collect();
            let facts = facts.filter(|f| !f.is_empty())?;
            Some((TaskKind::MultiLabel, Solution::Labels { facts }))
        }
        "penalty" => {
            let terms: Option<Vec<u64>> = rest.strip_prefix(&["items"])?.iter().map(|w| w.parse().ok()).collect();
            let terms = terms.filter(|t| !t.is_empty())?;
            Some((TaskKind::NumericDistance, Solution::Sum { terms }))
        }
        "amount" => {
            let terms: Option<Vec<u64>> = rest
                .iter()
                .enumerate()
                .filter(|(i, w)| !(i % 2 == 1 && **w == "+"))
                .map(|(_, w)| w.parse().ok())
                .collect();
            let terms = terms.filter(|t| !t.is_empty())?;
            Some((TaskKind::NumericExact, Solution::Sum { terms }))
        }
        "choice" => {
            let rest = rest.strip_prefix(&["facts"])?;
            let fact = fact_index(rest.first()?)?;
            let opts = rest.get(1..)?.strip_prefix(&["options"])?;
            let letter = opts
                .chunks(2)
                .find(|c| c.len() == 2 && c[1] == LABELS[fact])
                .map(|c| c[0].to_string())?;
            Some((TaskKind::MultipleChoice, Solution::Choice { fact, letter }))
        }
        _ => None,
    }
}

/// Oracle solver: the gold answer as derived from the prompt alone.
pub fn oracle_solve(task: &TaskInstance, vocab: &Vocab) -> Option<GoldTarget> {
    let words: Vec<&str> = task.prompt_tokens.iter().map(|&t| vocab.token(t)).collect::<Option<_>>()?;
    let (kind, sol) = solve_prompt(&words)?;
    (kind == task.kind).then(|| sol.gold())
}

/// Picks one element; used by the trace writer for surface variation.
pub(crate) fn pick<'a>(rng: &mut impl Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty choice list")
}
