//! The four pipeline commands. Each reads its inputs before writing anything
//! so a missing input never leaves partial output behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::corpus::{
    generate_sft_traces, generate_task_suite, render_prompts, SftTrace, TaskInstance, TaskRecord, TraceRecord, Vocab,
};
use crate::error::{Error, Result};
use crate::grpo::{run_grpo_with, StepRecord, TaskEnvironment};
use crate::io::{read_jsonl, write_file, write_jsonl, ArtifactHeader};
use crate::policy::{Checkpoint, CheckpointMeta, PolicyParams};
use crate::rewards::{parse_structured_output, RewardMode};
use crate::sft::run_sft;
use crate::telemetry::{
    correlation_report, evaluate, length_score_table, probes, reasoning_quality_ppl, token_prominence,
    variance_series, EvalOutput, EvalReport, ProbeRecord,
};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const EVAL_TASKS_FILE: &str = "eval_tasks.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SFT_CHECKPOINT: &str = "sft.ckpt";
pub const SFT_LOSS_FILE: &str = "sft_loss.jsonl";

/// A resolved configuration plus where artifacts go.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub config_hash: String,
}

impl Context {
    /// The hash covers everything except the output directory, so the same
    /// run written to two places yields identical bytes.
    pub fn new(cfg: RunConfig) -> Self {
        let out = cfg.paths.out_dir.clone();
        let mut hashed = cfg.clone();
        hashed.paths = Default::default();
        let config_hash = hashed.hash();
        Self { cfg, out, config_hash }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn header(&self, artifact: &str) -> ArtifactHeader {
        ArtifactHeader::new(artifact, self.config_hash.clone(), self.cfg.seed)
    }

    fn meta(&self, step: usize) -> CheckpointMeta {
        CheckpointMeta { seed: self.cfg.seed, step: step as u64, config_hash: self.config_hash.clone() }
    }

    pub fn load_vocab(&self) -> Result<Vocab> {
        let path = self.path(VOCAB_FILE);
        if !path.exists() {
            return Err(Error::Missing { what: "vocabulary file", path });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Vocab::from_list_file(&text)
    }

    pub fn load_tasks(&self, name: &str, vocab: &Vocab) -> Result<Vec<TaskInstance>> {
        let (_, recs): (_, Vec<TaskRecord>) = read_jsonl(&self.path(name))?;
        recs.iter().map(|r| r.to_task(vocab)).collect()
    }

    pub fn load_checkpoint(&self, path: &Path, vocab: &Vocab) -> Result<Checkpoint<f64>> {
        Checkpoint::load(path, Some(&self.cfg.policy.model_config(vocab.len())))
    }

    fn fresh_params(&self, vocab: &Vocab) -> Result<PolicyParams<f64>> {
        PolicyParams::init(self.cfg.policy.model_config(vocab.len()), self.cfg.seed, self.cfg.policy.init_std)
    }
}

/// Training and evaluation suites, traces and the vocabulary.
pub fn cmd_gen_corpus(ctx: &Context) -> Result<Vec<PathBuf>> {
    let c = &ctx.cfg;
    let vocab = Vocab::standard();
    let train = generate_task_suite(c.seed, &c.corpus.train_counts, &vocab);
    let eval = generate_task_suite(c.seed.wrapping_add(c.corpus.eval_seed_offset), &c.corpus.eval_counts, &vocab);
    let traces = generate_sft_traces(&train, c.seed, &vocab)?;

    let tasks: Vec<TaskRecord> = train.iter().map(|t| TaskRecord::from_task(t, &vocab)).collect();
    let eval_tasks: Vec<TaskRecord> = eval.iter().map(|t| TaskRecord::from_task(t, &vocab)).collect();
    let trace_recs: Vec<TraceRecord> = traces.iter().map(|t| TraceRecord::from_trace(t, &vocab)).collect();
    let header_line = format!("#! {}\n", serde_json::to_string(&ctx.header("vocab"))?);

    let written = vec![ctx.path(TASKS_FILE), ctx.path(EVAL_TASKS_FILE), ctx.path(TRACES_FILE), ctx.path(VOCAB_FILE)];
    write_jsonl(&written[0], &ctx.header("tasks"), &tasks)?;
    write_jsonl(&written[1], &ctx.header("eval_tasks"), &eval_tasks)?;
    write_jsonl(&written[2], &ctx.header("traces"), &trace_recs)?;
    write_file(&written[3], (header_line + &vocab.to_list_file()).as_bytes())?;
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sft,
    Grpo,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Starting checkpoint; GRPO defaults to the SFT checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Start GRPO from freshly initialized parameters.
    pub from_scratch: bool,
}

/// Stem of the GRPO artifacts for a mode.
pub fn grpo_run_name(mode: RewardMode, from_scratch: bool) -> String {
    let base = format!("grpo_{}", mode.as_str());
    if from_scratch {
        base + "_scratch"
    } else {
        base
    }
}

pub fn cmd_train(ctx: &Context, stage: Stage, opts: &TrainOptions) -> Result<Vec<PathBuf>> {
    let vocab = ctx.load_vocab()?;
    match stage {
        Stage::Sft => train_sft(ctx, &vocab, opts),
        Stage::Grpo => train_grpo(ctx, &vocab, opts),
    }
}

fn train_sft(ctx: &Context, vocab: &Vocab, opts: &TrainOptions) -> Result<Vec<PathBuf>> {
    let (_, recs): (_, Vec<TraceRecord>) = read_jsonl(&ctx.path(TRACES_FILE))?;
    let traces: Vec<SftTrace> = recs.iter().map(|r| r.to_trace(vocab)).collect::<Result<_>>()?;
    let start = match &opts.checkpoint {
        Some(p) => ctx.load_checkpoint(p, vocab)?.params,
        None => ctx.fresh_params(vocab)?,
    };
    let (params, curve) = run_sft(&start, &traces, &ctx.cfg.sft_config())?;
    let ckpt = ctx.path(SFT_CHECKPOINT);
    let loss = ctx.path(SFT_LOSS_FILE);
    Checkpoint { params, meta: ctx.meta(curve.len()) }.save(&ckpt)?;
    write_jsonl(&loss, &ctx.header("sft_loss"), &curve)?;
    Ok(vec![ckpt, loss])
}

fn train_grpo(ctx: &Context, vocab: &Vocab, opts: &TrainOptions) -> Result<Vec<PathBuf>> {
    let tasks = ctx.load_tasks(TASKS_FILE, vocab)?;
    let start = if opts.from_scratch {
        ctx.fresh_params(vocab)?
    } else {
        let path = opts.checkpoint.clone().unwrap_or_else(|| ctx.path(SFT_CHECKPOINT));
        ctx.load_checkpoint(&path, vocab)?.params
    };
    let mode = ctx.cfg.rewards.mode;
    let name = grpo_run_name(mode, opts.from_scratch);
    let cfg = ctx.cfg.grpo_config(mode, None);
    let env = TaskEnvironment::new(&tasks, vocab, ctx.cfg.dist_config(), ctx.cfg.rewards.temperature);
    let mut written = Vec::new();
    let (params, log) = run_grpo_with(&start, &env, &cfg, &mut |step, p| {
        let path = ctx.path(&format!("{name}_step{step}.ckpt"));
        Checkpoint { params: p.clone(), meta: ctx.meta(step) }.save(&path)?;
        written.push(path);
        Ok(())
    })?;
    let ckpt = ctx.path(&format!("{name}.ckpt"));
    let log_path = ctx.path(&format!("{name}_log.jsonl"));
    Checkpoint { params, meta: ctx.meta(log.len()) }.save(&ckpt)?;
    write_jsonl(&log_path, &ctx.header("grpo_log"), &log)?;
    written.extend([ckpt, log_path]);
    Ok(written)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    header: ArtifactHeader,
    report: EvalReport,
}

/// Greedy evaluation of `checkpoint` on the evaluation suite. Writes
/// `eval_<stem>.json` and `eval_<stem>_outputs.jsonl`.
pub fn cmd_eval(ctx: &Context, checkpoint: &Path, mode: Option<RewardMode>) -> Result<Vec<PathBuf>> {
    let vocab = ctx.load_vocab()?;
    let suite = ctx.load_tasks(EVAL_TASKS_FILE, &vocab)?;
    let ck = ctx.load_checkpoint(checkpoint, &vocab)?;
    let id = stem(checkpoint);
    let (report, outputs) = evaluate(&ck.params, &suite, &vocab, &ctx.cfg.telemetry, &id, mode.map(RewardMode::as_str))?;
    let report_path = ctx.path(&format!("eval_{id}.json"));
    let outputs_path = ctx.path(&format!("eval_{id}_outputs.jsonl"));
    let mut text = serde_json::to_string_pretty(&ReportFile { header: ctx.header("eval_report"), report })?;
    text.push('\n');
    write_file(&report_path, text.as_bytes())?;
    write_jsonl(&outputs_path, &ctx.header("eval_outputs"), &outputs)?;
    Ok(vec![report_path, outputs_path])
}

pub fn read_eval_report(path: &Path) -> Result<(ArtifactHeader, EvalReport)> {
    if !path.exists() {
        return Err(Error::Missing { what: "evaluation report", path: path.to_path_buf() });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: ReportFile =
        serde_json::from_str(&text).map_err(|e| Error::Record { path: path.to_path_buf(), detail: e.to_string() })?;
    Ok((f.header, f.report))
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeInputs {
    pub logs: Vec<PathBuf>,
    /// One or two evaluation output files; with two, the first is the
    /// baseline of the length table.
    pub eval_outputs: Vec<PathBuf>,
    /// Frozen scorer for prominence and perplexity; defaults to the SFT checkpoint.
    pub scorer: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRow {
    pub run: String,
    #[serde(flatten)]
    pub probe: ProbeRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub run: String,
    pub stage: usize,
    pub first_step: usize,
    pub last_step: usize,
    pub mean_dq: f64,
    pub mean_legal: f64,
    pub mean_reward: f64,
    pub pearson_r: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProminenceRow {
    pub run: String,
    pub task_id: String,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplRow {
    pub run: String,
    pub task_id: String,
    /// Gold-answer perplexity after the generated reasoning span.
    pub ppl: f64,
    /// The same with an empty reasoning span, for reference.
    pub ppl_empty_span: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthTableRow {
    pub bucket: String,
    pub run: String,
    pub count: usize,
    pub mean_length: f64,
    pub mean_score: f64,
    pub baseline_median: f64,
    pub degenerate: bool,
}

/// Figure-analog data files from run logs and evaluation outputs.
pub fn cmd_analyze(ctx: &Context, inputs: &AnalyzeInputs) -> Result<Vec<PathBuf>> {
    if inputs.logs.is_empty() && inputs.eval_outputs.is_empty() {
        return Err(Error::InvalidArgument("analyze needs at least one --log or --eval-outputs file".into()));
    }
    if inputs.eval_outputs.len() > 2 {
        return Err(Error::InvalidArgument("analyze takes at most two --eval-outputs files".into()));
    }
    let mut runs: Vec<(String, Vec<StepRecord>)> = Vec::new();
    for p in &inputs.logs {
        let (_, log) = read_jsonl::<StepRecord>(p)?;
        runs.push((stem(p), log));
    }
    let mut evals: Vec<(String, Vec<EvalOutput>)> = Vec::new();
    for p in &inputs.eval_outputs {
        let (_, outs) = read_jsonl::<EvalOutput>(p)?;
        evals.push((stem(p), outs));
    }

    let mut files: BTreeMap<&'static str, String> = BTreeMap::new();
    if !runs.is_empty() {
        let mut logits = Vec::new();
        let mut corr = Vec::new();
        let mut var = Vec::new();
        for (run, log) in &runs {
            let p = probes(log);
            logits.extend(p.iter().map(|&probe| LogitRow { run: run.clone(), probe }));
            let rep = correlation_report(&p)?;
            corr.extend(rep.stages.iter().map(|s| CorrelationRow {
                run: run.clone(),
                stage: s.stage,
                first_step: s.first_step,
                last_step: s.last_step,
                mean_dq: s.mean_dq,
                mean_legal: s.mean_legal,
                mean_reward: s.mean_reward,
                pearson_r: rep.pearson_r,
                degenerate: rep.degenerate,
            }));
            var.push(variance_series(run, log));
        }
        files.insert("fig3_logits.jsonl", crate::io::to_jsonl(&ctx.header("fig3_logits"), &logits)?);
        files.insert("fig4_correlation.jsonl", crate::io::to_jsonl(&ctx.header("fig4_correlation"), &corr)?);
        files.insert("fig4_variance.jsonl", crate::io::to_jsonl(&ctx.header("fig4_variance"), &var)?);
    }

    if !evals.is_empty() {
        let vocab = ctx.load_vocab()?;
        let tasks: BTreeMap<String, TaskInstance> =
            ctx.load_tasks(EVAL_TASKS_FILE, &vocab)?.into_iter().map(|t| (t.id.clone(), t)).collect();
        let scorer_path = inputs.scorer.clone().unwrap_or_else(|| ctx.path(SFT_CHECKPOINT));
        let scorer = ctx.load_checkpoint(&scorer_path, &vocab)?.params;
        let marked = ctx.cfg.telemetry.marked_ids(&vocab)?;
        let mut prom = Vec::new();
        let mut ppl = Vec::new();
        for (run, outs) in &evals {
            for o in outs {
                let task = tasks.get(&o.task_id).ok_or_else(|| Error::Record {
                    path: PathBuf::from(run),
                    detail: format!("task {} is not in the evaluation suite", o.task_id),
                })?;
                let mut seq = render_prompts(task, &vocab).reasoning_context_prefix;
                seq.extend_from_slice(&o.response);
                seq.truncate(scorer.config().max_len);
                if let Ok(v) = token_prominence(&scorer, &seq, &marked) {
                    prom.push(ProminenceRow { run: run.clone(), task_id: o.task_id.clone(), prominence: v });
                }
                let parsed = parse_structured_output(&o.response, &vocab.tags());
                if let Some(span) = parsed.reasoning_span() {
                    let with = reasoning_quality_ppl(&scorer, task, &vocab, span);
                    let without = reasoning_quality_ppl(&scorer, task, &vocab, &[]);
                    if let (Ok(ppl_v), Ok(empty)) = (with, without) {
                        ppl.push(PplRow { run: run.clone(), task_id: o.task_id.clone(), ppl: ppl_v, ppl_empty_span: empty });
                    }
                }
            }
        }
        files.insert("fig5_prominence.jsonl", crate::io::to_jsonl(&ctx.header("fig5_prominence"), &prom)?);
        files.insert("fig5_ppl.jsonl", crate::io::to_jsonl(&ctx.header("fig5_ppl"), &ppl)?);
        if let [(base_run, base), (cand_run, cand)] = evals.as_slice() {
            let t = length_score_table(base, cand);
            let rows: Vec<LengthTableRow> = t
                .rows
                .iter()
                .map(|r| LengthTableRow {
                    bucket: r.bucket.clone(),
                    run: if r.run == "baseline" { base_run.clone() } else { cand_run.clone() },
                    count: r.count,
                    mean_length: r.mean_length,
                    mean_score: r.mean_score,
                    baseline_median: t.median,
                    degenerate: t.degenerate,
                })
                .collect();
            files.insert("table4_lengths.jsonl", crate::io::to_jsonl(&ctx.header("table4_lengths"), &rows)?);
        }
    }

    let mut written = Vec::new();
    for (name, text) in files {
        let path = ctx.path(name);
        write_file(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
