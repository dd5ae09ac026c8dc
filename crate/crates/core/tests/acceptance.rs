//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion, and exits non-zero if any of them fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use infogain::cli::{cmd_analyze, cmd_eval, cmd_gen_corpus, cmd_train, AnalyzeInputs, Context, RunConfig, Stage, TrainOptions};
use infogain::corpus::{generate_sft_traces, generate_task_suite, KindCounts, SftTrace, TaskInstance, TaskKind, Vocab};
use infogain::grpo::{kl_estimator, kl_penalty_term, run_grpo, standardize, GrpoConfig, TaskEnvironment, TokenBandit, TrajectoryMember};
use infogain::policy::{
    continuation_logprobs, forward, ModelConfig, OptimizerKind, PolicyParams, SamplerConfig,
};
use infogain::rewards::{
    delta_q_from_contexts, distance_reward, f1_score, info_reward, DistanceRewardConfig, FormatFlags, InfoGainConfig,
    RewardBreakdown, RewardMode,
};
use infogain::rng;
use infogain::sft::{batch_loss, run_sft, LrSchedule, SftConfig};
use infogain::telemetry::{
    correlation_report, evaluate, jaccard, reasoning_quality_ppl, token_prominence, variance_series, ProbeRecord,
    TelemetryConfig,
};
use rand::Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------------------
// Toy pipeline shared by the convergence and ablation criteria.

struct Toy {
    vocab: Vocab,
    train: Vec<TaskInstance>,
    eval: Vec<TaskInstance>,
    sft_params: PolicyParams<f64>,
    sft_accuracy: f64,
    sft_time: Duration,
}

fn toy_model(v: usize) -> ModelConfig {
    ModelConfig { vocab_size: v, d_model: 32, n_layers: 2, n_heads: 4, max_len: 64, ffn_mult: 4 }
}

fn toy_sft_config() -> SftConfig {
    SftConfig { learning_rate: 3e-3, batch_size: 8, epochs: 20, optimizer: OptimizerKind::adamw(), seed: 1, ..SftConfig::default() }
}

fn toy_grpo_config(mode: RewardMode, steps: usize, seed: u64) -> GrpoConfig {
    GrpoConfig {
        mode,
        steps,
        seed,
        learning_rate: 0.01,
        lr_schedule: LrSchedule::Constant,
        optimizer: OptimizerKind::Sgd { momentum: 0.0 },
        ..GrpoConfig::default()
    }
}

fn numeric_exact(n: usize) -> KindCounts {
    [(TaskKind::NumericExact, n)].into_iter().collect()
}

fn build_toy() -> Toy {
    let vocab = Vocab::standard();
    let train = generate_task_suite(1, &numeric_exact(450), &vocab);
    let eval = generate_task_suite(2, &numeric_exact(100), &vocab);
    let traces = generate_sft_traces(&train, 1, &vocab).unwrap();
    let p0 = PolicyParams::init(toy_model(vocab.len()), 0, 0.02).unwrap();
    let t = Instant::now();
    let (sft_params, _) = run_sft(&p0, &traces, &toy_sft_config()).unwrap();
    let sft_time = t.elapsed();
    let (rep, _) = evaluate(&sft_params, &eval, &vocab, &TelemetryConfig::default(), "sft", None).unwrap();
    Toy { vocab, train, eval, sft_params, sft_accuracy: rep.accuracy, sft_time }
}

fn eval_accuracy(toy: &Toy, p: &PolicyParams<f64>) -> f64 {
    evaluate(p, &toy.eval, &toy.vocab, &TelemetryConfig::default(), "x", None).unwrap().0.accuracy
}

// ---------------------------------------------------------------------------

fn c1_decomposition() -> Outcome {
    let t = Instant::now();
    let mut r = rng::seeded(101, 0);
    let mut worst: f64 = 0.0;
    for i in 0..1000u64 {
        let v = r.random_range(4..=64);
        let cfg = ModelConfig { vocab_size: v, d_model: 8, n_layers: 1, n_heads: 2, max_len: 24, ffn_mult: 2 };
        let p = PolicyParams::<f64>::init(cfg, i, 0.6).unwrap();
        let mut seq = |len: usize| -> Vec<usize> { (0..len).map(|_| r.random_range(0..v)).collect() };
        let (rc, dc, ans) = {
            let a = seq(1 + (i as usize % 9));
            let b = seq(1 + (i as usize % 5));
            let c = seq(1 + (i as usize % 4));
            (a, b, c)
        };
        let dq = delta_q_from_contexts(&p, &rc, &dc, &ans).map_err(|e| e.to_string())?.value;
        // Independent oracle: brute-force partition sums from raw forward logits.
        let terms = |ctx: &[usize]| -> Vec<(f64, f64)> {
            let mut full = ctx.to_vec();
            full.extend_from_slice(&ans[..ans.len() - 1]);
            let out = forward(&p, &full).unwrap();
            ans.iter()
                .enumerate()
                .map(|(k, &a)| {
                    let row = out.logits_at(ctx.len() - 1 + k);
                    let z: f64 = row.iter().map(|x| x.exp()).sum();
                    (row[a] - z.ln(), z.ln())
                })
                .collect()
        };
        let (tr, td) = (terms(&rc), terms(&dc));
        let n = ans.len() as f64;
        let pmi: f64 = tr.iter().zip(&td).map(|(a, b)| a.0 - b.0).sum::<f64>() / n;
        let logz: f64 = tr.iter().zip(&td).map(|(a, b)| a.1 - b.1).sum::<f64>() / n;
        worst = worst.max((dq - (pmi + logz)).abs());
    }
    let el = t.elapsed();
    ensure!(worst < 1e-6, "max |dQ - (PMI + logZ)| = {worst:e}");
    ensure!(el < Duration::from_secs(60), "took {:.1}s", secs(el));
    Ok(format!("1000 triples, max residual {worst:.1e}, {:.1}s", secs(el)))
}

fn c2_reward_algebra() -> Outcome {
    let cfg = InfoGainConfig::default();
    for r in [0.0, 0.25, 1.0] {
        let (m, info) = info_reward(r, 0.0f64, &cfg);
        ensure!(m == 0.5 && info == r / 2.0, "sigma(0) modulation gave {m}, {info}");
    }
    ensure!(distance_reward(17.0f64, 17.0, 36.0) == 1.0, "R_dist at pred == true");
    let at36 = distance_reward(1.0f64, 36f64.exp(), 36.0);
    ensure!((at36 - (-1f64).exp()).abs() < 1e-5, "R_dist at log distance 36 = {at36}");
    let c = DistanceRewardConfig::default().c;
    ensure!(c == 36.0, "default c = {c}");

    let pred: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
    let gold: BTreeSet<String> = ["b", "c"].iter().map(|s| s.to_string()).collect();
    // Oracle: count membership directly.
    let (pv, gv) = (["a", "b"], ["b", "c"]);
    let inter = pv.iter().filter(|x| gv.contains(x)).count() as f64;
    let union = (pv.len() + gv.len()) as f64 - inter;
    let (p, rcl) = (inter / pv.len() as f64, inter / gv.len() as f64);
    let f1_oracle = 2.0 * p * rcl / (p + rcl);
    let f1: f64 = f1_score(&pred, &gold);
    let jac = jaccard(&pred, &gold);
    ensure!((f1 - f1_oracle).abs() < 1e-6 && (f1 - 0.5).abs() < 1e-6, "F1 = {f1}");
    ensure!((jac - inter / union).abs() < 1e-6 && (jac - 1.0 / 3.0).abs() < 1e-6, "Jaccard = {jac}");
    Ok(format!("R_info(dQ=0) = R_legal/2, R_dist(36) = {at36:.6}, F1 = {f1}, Jaccard = {jac:.6}"))
}

fn c3_gradients() -> Outcome {
    let t = Instant::now();
    let lp = common::logprob_fd_error(common::tiny(16), 1, 200);
    let sur = common::surrogate_fd_error(1, 200, 0.04).max(common::surrogate_fd_error(2, 200, 0.5));
    let el = t.elapsed();
    ensure!(lp < 1e-4, "log-prob gradient worst relative error {lp:e}");
    ensure!(sur < 1e-4, "surrogate gradient worst relative error {sur:e}");
    ensure!(el < Duration::from_secs(120), "took {:.1}s", secs(el));
    Ok(format!("worst rel. error log-prob {lp:.1e}, surrogate {sur:.1e} (200 coords each), {:.1}s", secs(el)))
}

fn c4_advantages() -> Outcome {
    let mut r = rng::seeded(404, 0);
    let mut checked = 0;
    for _ in 0..2000 {
        let g = r.random_range(2..=12);
        let rewards: Vec<f64> = (0..g).map(|_| r.random_range(-3.0..3.0)).collect();
        let a = standardize(&rewards, 1e-8);
        let shift = r.random_range(-50.0..50.0);
        let scale = r.random_range(0.05..20.0);
        let shifted = standardize(&rewards.iter().map(|x| x + shift).collect::<Vec<_>>(), 1e-8);
        let scaled = standardize(&rewards.iter().map(|x| x * scale).collect::<Vec<_>>(), 1e-8);
        let m = rewards.iter().sum::<f64>() / g as f64;
        let sd = (rewards.iter().map(|x| (x - m).powi(2)).sum::<f64>() / g as f64).sqrt();
        for i in 0..g {
            ensure!((a[i] - shifted[i]).abs() < 1e-6, "shift changed A_{i}: {} vs {}", a[i], shifted[i]);
            if sd > 1e-4 && sd * scale > 1e-4 {
                ensure!((a[i] - scaled[i]).abs() < 1e-6, "scale changed A_{i}: {} vs {}", a[i], scaled[i]);
            }
        }
        let best = (0..g).max_by(|&i, &j| rewards[i].total_cmp(&rewards[j])).unwrap();
        ensure!(a.iter().all(|&x| x <= a[best]), "max-reward member lacks max advantage");
        let flat = standardize(&vec![rewards[0]; g], 1e-8);
        ensure!(flat.iter().all(|&x| x == 0.0), "equal rewards gave {flat:?}");
        checked += 1;
    }
    Ok(format!("{checked} random groups: shift, scale, equal-reward and argmax properties hold"))
}

fn c5_kl() -> Outcome {
    let cfg = ModelConfig { vocab_size: 12, d_model: 8, n_layers: 1, n_heads: 2, max_len: 16, ffn_mult: 2 };
    let p = PolicyParams::<f64>::init(cfg, 5, 0.5).unwrap();
    let (ctx, toks) = (vec![1, 2, 3], vec![4, 5, 6, 7]);
    let member = TrajectoryMember {
        snapshot_logprobs: continuation_logprobs(&p, &ctx, &toks).unwrap(),
        context: ctx,
        tokens: toks,
        structured: None,
        breakdown: RewardBreakdown {
            r_format: 0.0,
            r_legal: 0.0,
            delta_q: 0.0,
            modulation: 0.0,
            r_info: 0.0,
            total: 0.0,
            direct_logit: 0.0,
            reasoning_logit: 0.0,
            delta_q_degenerate: true,
            flags: FormatFlags::default(),
        },
        advantage: 0.0,
    };
    let same = kl_penalty_term(&p, &member).unwrap();
    ensure!(same == 0.0, "KL with live == snapshot is {same}");

    let mut r = rng::seeded(505, 0);
    let log_softmax = |xs: &[f64]| -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        xs.iter().map(|x| x - z).collect()
    };
    let mut min: f64 = f64::INFINITY;
    for _ in 0..100_000 {
        let scale = r.random_range(0.01..8.0);
        let a: Vec<f64> = (0..8).map(|_| r.random_range(-scale..scale)).collect();
        let b: Vec<f64> = (0..8).map(|_| r.random_range(-scale..scale)).collect();
        let (la, lb) = (log_softmax(&a), log_softmax(&b));
        let tok = r.random_range(0..8);
        let v = kl_estimator(la[tok] - lb[tok]);
        ensure!(v >= 0.0, "negative estimate {v} at delta {}", la[tok] - lb[tok]);
        min = min.min(v);
    }
    Ok(format!("zero at live == snapshot; 100000 random logit pairs, min estimate {min:.1e}"))
}

fn held_out_traces(vocab: &Vocab) -> Vec<(Vec<usize>, Vec<usize>)> {
    let suite = generate_task_suite(77, &numeric_exact(60), vocab);
    generate_sft_traces(&suite, 77, vocab).unwrap().into_iter().map(|t| (t.context, t.target)).collect()
}

fn c6_sft() -> Outcome {
    let vocab = Vocab::standard();
    let suite = generate_task_suite(1, &numeric_exact(450), &vocab);
    let traces: Vec<SftTrace> = generate_sft_traces(&suite, 1, &vocab).unwrap();
    ensure!(traces.len() == 450, "{} traces", traces.len());
    let held = held_out_traces(&vocab);

    let mut uniform = PolicyParams::<f64>::init(toy_model(vocab.len()), 0, 0.02).unwrap();
    uniform.zero_output_head();
    let l_uniform = batch_loss(&uniform, &held).unwrap();
    let log_v = (vocab.len() as f64).ln();
    ensure!((l_uniform - log_v).abs() < 1e-3, "uniform loss {l_uniform} vs log V {log_v}");

    let p0 = PolicyParams::<f64>::init(toy_model(vocab.len()), 0, 0.02).unwrap();
    let before = batch_loss(&p0, &held).unwrap();
    let (p1, _) = run_sft(&p0, &traces, &SftConfig::default()).unwrap();
    let after = batch_loss(&p1, &held).unwrap();
    ensure!(after < before, "held-out loss {before} -> {after}");
    Ok(format!("uniform loss {l_uniform:.4} = log {}; default-config held-out loss {before:.4} -> {after:.4}", vocab.len()))
}

fn c7_convergence(toy: &Toy) -> Outcome {
    let t = Instant::now();
    let env = TaskEnvironment::new(&toy.train, &toy.vocab, DistanceRewardConfig::default(), 0.2);
    let (p, _) = run_grpo(&toy.sft_params, &env, &toy_grpo_config(RewardMode::InfoGain, 300, 7)).unwrap();
    let acc = eval_accuracy(toy, &p);

    let bandit_model = ModelConfig { vocab_size: 3, d_model: 8, n_layers: 1, n_heads: 2, max_len: 4, ffn_mult: 2 };
    let b0 = PolicyParams::<f64>::init(bandit_model, 4, 0.3).unwrap();
    let bcfg = GrpoConfig {
        steps: 500,
        learning_rate: 0.05,
        lr_schedule: LrSchedule::Constant,
        sampler: SamplerConfig { temperature: 1.0, top_p: 1.0, max_new_tokens: 1, ..SamplerConfig::default() },
        seed: 3,
        ..GrpoConfig::default()
    };
    let (b1, _) = run_grpo(&b0, &TokenBandit { start: 0, rewarded: 2 }, &bcfg).unwrap();
    let prob = continuation_logprobs(&b1, &[0], &[2]).unwrap()[0].exp();
    let total = t.elapsed() + toy.sft_time;
    ensure!(acc >= 0.9, "toy eval accuracy {acc} after 300 steps (SFT start {})", toy.sft_accuracy);
    ensure!(prob >= 0.95, "bandit rewarded-token probability {prob}");
    ensure!(total < Duration::from_secs(600), "took {:.0}s", secs(total));
    Ok(format!(
        "eval accuracy {:.2} -> {acc:.2} after 300 steps; bandit p = {prob:.4} after 500 steps; {:.0}s incl. SFT",
        toy.sft_accuracy,
        secs(total)
    ))
}

fn c8_ablation(toy: &Toy) -> Outcome {
    let env = TaskEnvironment::new(&toy.train, &toy.vocab, DistanceRewardConfig::default(), 0.2);
    let out = TempDir::new().map_err(|e| e.to_string())?;
    let mut series = Vec::new();
    let mut gaps = Vec::new();
    let mut var_lower = 0;
    let seeds = [11u64, 12, 13, 14, 15];
    for &seed in &seeds {
        let mut accs = Vec::new();
        let mut vars = Vec::new();
        for mode in [RewardMode::InfoGain, RewardMode::LegalOnly] {
            let (p, log) = run_grpo(&toy.sft_params, &env, &toy_grpo_config(mode, 150, seed)).unwrap();
            accs.push(eval_accuracy(toy, &p));
            let s = variance_series(&format!("seed{seed}_{}", mode.as_str()), &log);
            vars.push(s.mean_variance);
            series.push(s);
        }
        gaps.push(accs[0] - accs[1]);
        if vars[0] < vars[1] {
            var_lower += 1;
        }
    }
    let header = infogain::io::ArtifactHeader::new("fig4_variance", "acceptance", 0);
    let path = out.path().join("fig4_variance.jsonl");
    infogain::io::write_jsonl(&path, &header, &series).map_err(|e| e.to_string())?;
    let (_, back): (_, Vec<infogain::telemetry::VarianceSeries>) = infogain::io::read_jsonl(&path).unwrap();
    ensure!(back.len() == 2 * seeds.len(), "fig4_variance holds {} series", back.len());
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    ensure!(mean_gap >= -0.05, "mean accuracy gap InfoGain - LegalOnly = {mean_gap:.3} (per pair {gaps:?})");
    Ok(format!(
        "{} pairs; mean accuracy gap InfoGain - LegalOnly {:+.3} (per pair {}); InfoGain reward variance lower in {var_lower}/{} pairs (reported, not gated)",
        seeds.len(),
        mean_gap,
        gaps.iter().map(|g| format!("{g:+.2}")).collect::<Vec<_>>().join(" "),
        seeds.len()
    ))
}

fn c9_telemetry() -> Outcome {
    let vocab = Vocab::standard();
    let cfg = ModelConfig { vocab_size: vocab.len(), d_model: 16, n_layers: 1, n_heads: 2, max_len: 64, ffn_mult: 2 };
    let p = PolicyParams::<f64>::init(cfg, 9, 0.4).unwrap();
    let seq: Vec<usize> = vocab.encode("<bos> amount 3 + 4 <reasoning> so 7 </reasoning> <answer> 7 </answer>").unwrap();
    let all: BTreeSet<usize> = (0..vocab.len()).collect();
    let prom = token_prominence(&p, &seq, &all).unwrap();
    ensure!(prom == 0.0, "all-token prominence {prom}");

    let task = generate_task_suite(3, &numeric_exact(1), &vocab).remove(0);
    let gold = task.gold.canonical_tokens(&vocab).unwrap();
    ensure!(gold.len() == 1, "single-token gold expected");
    let mut sure = p.clone();
    sure.zero_output_head();
    sure.output_head_mut().1[gold[0]] = 1000.0;
    let span = vocab.encode("given").unwrap();
    let ppl_one = reasoning_quality_ppl(&sure, &task, &vocab, &span).unwrap();
    ensure!(ppl_one == 1.0, "probability-1 scorer perplexity {ppl_one}");
    let mut flat = p.clone();
    flat.zero_output_head();
    let ppl_uniform = reasoning_quality_ppl(&flat, &task, &vocab, &span).unwrap();
    ensure!((ppl_uniform - vocab.len() as f64).abs() < 1e-2, "uniform scorer perplexity {ppl_uniform}");

    let mut r = rng::seeded(909, 0);
    let probes: Vec<ProbeRecord> = (0..30)
        .map(|s| {
            let dq = r.random_range(-2.0..4.0);
            ProbeRecord {
                step: s,
                direct_logit: 0.0,
                reasoning_logit: 0.0,
                reward_mean: 0.0,
                reward_variance: 0.0,
                mean_legal: 2.0 * dq + r.random_range(-1e-6..1e-6),
                mean_dq: dq,
                mean_modulation: 0.0,
            }
        })
        .collect();
    let rep = correlation_report(&probes).unwrap();
    ensure!((rep.pearson_r - 1.0).abs() < 0.01 && !rep.degenerate, "linear fixture r = {}", rep.pearson_r);
    Ok(format!("prominence 0; ppl {ppl_one} and {ppl_uniform:.4} (V = {}); r = {:.6}", vocab.len(), rep.pearson_r))
}

const SMALL: &str = r#"
seed = 21
corpus.train_counts = { numeric_exact = 10, multi_label = 4, multiple_choice = 3, numeric_distance = 3 }
corpus.eval_counts = { numeric_exact = 6, multi_label = 3, multiple_choice = 2, numeric_distance = 2 }
policy.d_model = 16
policy.n_layers = 1
policy.n_heads = 2
sampler.max_new_tokens = 24
sft.epochs = 1
sft.learning_rate = 0.003
grpo.steps = 6
grpo.group_size = 3
grpo.checkpoint_every = 3
telemetry.max_new_tokens = 24
"#;

fn full_run(dir: &Path) -> Result<(), String> {
    let mut cfg = RunConfig::from_toml(SMALL).map_err(|e| e.to_string())?;
    cfg.paths.out_dir = dir.to_path_buf();
    let ctx = Context::new(cfg.clone());
    let e = |x: infogain::Error| x.to_string();
    cmd_gen_corpus(&ctx).map_err(e)?;
    cmd_train(&ctx, Stage::Sft, &TrainOptions::default()).map_err(e)?;
    cmd_train(&ctx, Stage::Grpo, &TrainOptions::default()).map_err(e)?;
    cfg.rewards.mode = RewardMode::LegalOnly;
    let legal = Context::new(cfg);
    cmd_train(&legal, Stage::Grpo, &TrainOptions::default()).map_err(e)?;
    let p = |n: &str| dir.join(n);
    cmd_eval(&ctx, &p("grpo_info_gain.ckpt"), Some(RewardMode::InfoGain)).map_err(e)?;
    cmd_eval(&ctx, &p("grpo_legal_only.ckpt"), Some(RewardMode::LegalOnly)).map_err(e)?;
    cmd_analyze(
        &ctx,
        &AnalyzeInputs {
            logs: vec![p("grpo_info_gain_log.jsonl"), p("grpo_legal_only_log.jsonl")],
            eval_outputs: vec![p("eval_grpo_legal_only_outputs.jsonl"), p("eval_grpo_info_gain_outputs.jsonl")],
            scorer: None,
        },
    )
    .map_err(e)?;
    Ok(())
}

fn c10_determinism() -> Outcome {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    full_run(a.path())?;
    full_run(b.path())?;
    let list = |d: &Path| -> Vec<String> {
        let mut v: Vec<String> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        v.sort();
        v
    };
    let names = list(a.path());
    ensure!(names == list(b.path()), "different file sets");
    let mut bytes = 0;
    for n in &names {
        let (x, y) = (fs::read(a.path().join(n)).unwrap(), fs::read(b.path().join(n)).unwrap());
        ensure!(x == y, "{n} differs between identical runs");
        bytes += x.len();
    }
    for needed in ["sft.ckpt", "grpo_info_gain_log.jsonl", "eval_grpo_info_gain.json", "fig4_variance.jsonl", "table4_lengths.jsonl"] {
        ensure!(names.iter().any(|n| n == needed), "{needed} missing");
    }
    Ok(format!("{} artifacts ({bytes} bytes) byte-identical across two runs", names.len()))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let el = t.elapsed().as_secs_f64();
        let status = if r.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &r {
            Ok(s) | Err(s) => s.clone(),
        };
        println!("criterion {n:>2} [{status}] {name}: {detail} ({el:.1}s)");
        results.push((n, name, r, el));
    };

    run(1, "decomposition identity", &mut c1_decomposition);
    run(2, "reward algebra", &mut c2_reward_algebra);
    run(3, "gradient exactness", &mut c3_gradients);
    run(4, "advantage invariances", &mut c4_advantages);
    run(5, "KL estimator", &mut c5_kl);
    run(6, "SFT trainability", &mut c6_sft);
    let toy = catch_unwind(build_toy).ok();
    run(7, "toy GRPO convergence", &mut || match &toy {
        Some(t) => c7_convergence(t),
        None => Err("toy SFT pipeline failed".into()),
    });
    run(8, "InfoGain vs LegalOnly ablation", &mut || match &toy {
        Some(t) => c8_ablation(t),
        None => Err("toy SFT pipeline failed".into()),
    });
    run(9, "telemetry correctness", &mut c9_telemetry);
    run(10, "determinism", &mut c10_determinism);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
