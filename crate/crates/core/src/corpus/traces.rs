use rand::Rng;

use super::tasks::{pick, solve_prompt, Solution, TaskInstance, TaskKind};
use super::templates::render_prompts;
use super::vocab::{TokenId, Vocab, LABELS};
use crate::error::{Error, Result};
use crate::rng;

/// One supervised example: the reasoning-mode context and the tagged reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftTrace {
    pub task_id: String,
    pub kind: TaskKind,
    pub context: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Writes an oracle derivation for every task:
/// `<reasoning> restate facts, apply rule, conclude </reasoning> <answer> GOLD </answer> <eos>`.
/// Surface words of the derivation vary with `seed`; the answer span never does.
pub fn generate_sft_traces(suite: &[TaskInstance], seed: u64, vocab: &Vocab) -> Result<Vec<SftTrace>> {
    suite
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut rng = rng::seeded(seed, i as u64);
            let words: Vec<&str> = task
                .prompt_tokens
                .iter()
                .map(|&t| vocab.token(t))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Unsolvable(task.id.clone()))?;
            let (kind, sol) = solve_prompt(&words).ok_or_else(|| Error::Unsolvable(task.id.clone()))?;
            if kind != task.kind || sol.gold() != task.gold {
                return Err(Error::Unsolvable(task.id.clone()));
            }
            let reasoning = derivation(&sol, &mut rng);
            let answer = task.gold.canonical();
            let text = format!("<reasoning> {reasoning} </reasoning> <answer> {answer} </answer> <eos>");
            Ok(SftTrace {
                task_id: task.id.clone(),
                kind: task.kind,
                context: render_prompts(task, vocab).reasoning_context_prefix,
                target: vocab.encode(&text)?,
            })
        })
        .collect()
}

fn derivation(sol: &Solution, rng: &mut impl Rng) -> String {
    let intro = pick(rng, &["given", "known"]);
    let conclude = pick(rng, &["so", "thus", "hence"]);
    let conclusion = sol.gold().canonical();
    match sol {
        Solution::Labels { facts } => {
            let imply = pick(rng, &["implies", "means"]);
            let steps: Vec<String> = facts
                .iter()
                .map(|&f| format!("{} {imply} {}", super::vocab::FACTS[f], LABELS[f]))
                .collect();
            format!("{intro} {} {conclude} {conclusion}", steps.join(" "))
        }
        Solution::Sum { terms } => {
            let rule = pick(rng, &["add", "sum"]);
            let expr: Vec<String> = terms.iter().map(u64::to_string).collect();
            format!("{intro} {} {rule} {conclude} {conclusion}", expr.join(" + "))
        }
        Solution::Choice { fact, .. } => {
            let imply = pick(rng, &["implies", "means"]);
            format!(
                "{intro} {} {imply} {} pick {conclude} {conclusion}",
                super::vocab::FACTS[*fact],
                LABELS[*fact]
            )
        }
    }
}
