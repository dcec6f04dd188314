//! Command-line harness: world generation, training, evaluation, trace
//! scoring, replay, and a stub judge for exercising the external-judge
//! protocol.

mod artifacts;
mod commands;
mod config_io;

use std::path::PathBuf;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use tires_core::config::JudgeSection;

use crate::config_io::{config_help, resolve, JUDGE_ENDPOINT_VAR};

#[derive(Parser, Debug)]
#[command(
    name = "tires",
    about = "Train and evaluate a think/search/answer/reflect policy on a synthetic multi-hop QA world",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by the commands that take a configuration.
#[derive(clap::Args, Debug)]
struct ConfigArgs {
    /// TOML configuration file (built-in defaults when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path setting, e.g. --override optimizer.mode=reinforce++
    /// (repeatable; later flags win)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic world and its question pool
    GenWorld {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training loop, writing curves, audit log, trajectories, and
    /// a checkpoint
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (overrides the configured out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a question set
    Eval {
        /// checkpoint.json from a training run
        #[arg(long)]
        checkpoint: PathBuf,
        /// world.json the questions refer to
        #[arg(long)]
        world: PathBuf,
        /// questions.jsonl to evaluate on
        #[arg(long)]
        questions: PathBuf,
        /// Output directory for report.csv and summary.json
        #[arg(long)]
        out: PathBuf,
        /// Rollout seed (default: the checkpoint's config seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score stored trajectories, one reward breakdown per record
    ScoreTrace {
        /// Trajectory JSONL file (one record per line)
        #[arg(long)]
        traces: PathBuf,
        /// world.json the trajectories were produced against
        #[arg(long)]
        world: PathBuf,
        /// questions.jsonl naming every trajectory's question
        #[arg(long)]
        questions: PathBuf,
        /// Output directory for scores.csv
        #[arg(long)]
        out: PathBuf,
        /// Anneal factor applied to the shaped reward components
        #[arg(long, default_value_t = 1.0)]
        anneal: f64,
    },
    /// Re-render stored trajectories as tagged text with reward annotations
    Replay {
        /// Trajectory JSONL file (one record per line)
        #[arg(long)]
        traces: PathBuf,
        /// world.json the trajectories were produced against
        #[arg(long)]
        world: PathBuf,
        /// questions.jsonl naming every trajectory's question
        #[arg(long)]
        questions: PathBuf,
        /// Replay only the record on this 1-based line
        #[arg(long)]
        index: Option<usize>,
    },
    /// Serve the line-JSON judge protocol on stdin/stdout (for cmd:
    /// endpoints and tests)
    JudgeStub {
        /// Fixed sufficiency score (default: 1 when the gold answer appears
        /// in retrieved information)
        #[arg(long)]
        sufficient_score: Option<f64>,
        /// Fixed thinking score (default: 0.5)
        #[arg(long)]
        thinking_score: Option<f64>,
    },
}

/// The external-judge section score-trace should use: the endpoint variable
/// when set, the oracle otherwise.
fn judge_from_env() -> JudgeSection {
    let mut judge = JudgeSection::default();
    if let Ok(endpoint) = std::env::var(JUDGE_ENDPOINT_VAR) {
        if !endpoint.is_empty() {
            judge.mode = tires_core::config::JudgeMode::External;
            judge.endpoint = endpoint;
        }
    }
    judge
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().after_help(config_help()).get_matches();
    let cli = Cli::from_arg_matches(&matches)?;

    match cli.cmd {
        Cmd::GenWorld { config, out } => {
            let resolved = resolve(config.config.as_deref(), &config.overrides, None)?;
            commands::cmd_gen_world(&resolved, &out)
        }
        Cmd::Train { config, out } => {
            let resolved = resolve(config.config.as_deref(), &config.overrides, out.as_deref())?;
            commands::cmd_train(&resolved)
        }
        Cmd::Eval { checkpoint, world, questions, out, seed } => {
            commands::cmd_eval(&checkpoint, &world, &questions, &out, seed)
        }
        Cmd::ScoreTrace { traces, world, questions, out, anneal } => {
            commands::cmd_score_trace(&traces, &world, &questions, &out, anneal, &judge_from_env())
        }
        Cmd::Replay { traces, world, questions, index } => {
            commands::cmd_replay(&traces, &world, &questions, index)
        }
        Cmd::JudgeStub { sufficient_score, thinking_score } => {
            commands::cmd_judge_stub(sufficient_score, thinking_score)
        }
    }
}
