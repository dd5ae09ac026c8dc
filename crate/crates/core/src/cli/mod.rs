//! Command-line front end: `gen-corpus`, `train`, `eval` and `analyze`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_analyze, cmd_eval, cmd_gen_corpus, cmd_train, grpo_run_name, read_eval_report, AnalyzeInputs, Context, Stage,
    TrainOptions,
};
pub use config::RunConfig;

use crate::error::Result;
use crate::rewards::RewardMode;

#[derive(Debug, Parser)]
#[command(name = "infogain", version, about = "Reasoning-informed GRPO on a toy policy")]
pub struct Cli {
    /// TOML run configuration; defaults apply to every key it omits.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the configured artifact directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Sft,
    Grpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "info_gain", alias = "info-gain")]
    InfoGain,
    #[value(name = "legal_only", alias = "legal-only")]
    LegalOnly,
}

impl From<ModeArg> for RewardMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::InfoGain => RewardMode::InfoGain,
            ModeArg::LegalOnly => RewardMode::LegalOnly,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the training and evaluation task suites, SFT traces and vocabulary.
    GenCorpus,
    /// Runs one training stage.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Starting checkpoint (GRPO defaults to `sft.ckpt` in the output directory).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Starts GRPO from freshly initialized parameters instead of a checkpoint.
        #[arg(long)]
        from_scratch: bool,
        /// Overrides `rewards.mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Greedy evaluation of a checkpoint on the evaluation suite.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Mode label recorded in the report.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Figure-analog data from run logs and evaluation outputs.
    Analyze {
        /// GRPO run log; repeat for several runs.
        #[arg(long = "log", value_name = "PATH")]
        logs: Vec<PathBuf>,
        /// Evaluation outputs; give two to build the length table (baseline first).
        #[arg(long = "eval-outputs", value_name = "PATH")]
        eval_outputs: Vec<PathBuf>,
        /// Frozen scorer checkpoint (defaults to `sft.ckpt`).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

/// Loads the configuration and applies flag overrides. Every validation
/// error surfaces here, before any command writes a file.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out_dir = o.clone();
    }
    if let Command::Train { mode: Some(m), .. } = &cli.command {
        cfg.rewards.mode = (*m).into();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the parsed command and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let ctx = Context::new(resolve_config(cli)?);
    match &cli.command {
        Command::GenCorpus => cmd_gen_corpus(&ctx),
        Command::Train { stage, checkpoint, from_scratch, .. } => {
            let stage = match stage {
                StageArg::Sft => Stage::Sft,
                StageArg::Grpo => Stage::Grpo,
            };
            cmd_train(&ctx, stage, &TrainOptions { checkpoint: checkpoint.clone(), from_scratch: *from_scratch })
        }
        Command::Eval { checkpoint, mode } => cmd_eval(&ctx, checkpoint, mode.map(Into::into)),
        Command::Analyze { logs, eval_outputs, checkpoint } => cmd_analyze(
            &ctx,
            &AnalyzeInputs { logs: logs.clone(), eval_outputs: eval_outputs.clone(), scorer: checkpoint.clone() },
        ),
    }
}
