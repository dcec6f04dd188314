//! Implementations of the subcommands.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tires_core::config::{Config, JudgeSection};
use tires_core::reward::RewardWeights;
use tires_core::trace::{parse_partial, render_trajectory, SegmentKind, Trajectory};
use tires_core::trainer::{eval_policy, make_judge, question_pool, train, TrainingRun};
use tires_core::world::{generate_world, Question, WorldSpec};

use crate::artifacts::{
    create_scores_csv, load_checkpoint, load_questions, load_world, write_checkpoint,
    write_eval_report, write_json, write_questions, write_world, RunWriter,
};
use crate::config_io::ResolvedConfig;

/// The resolved-config snapshot written into every run directory.
#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    config_hash: &'a str,
    config: &'a Config,
}

fn write_config_snapshot(out_dir: &Path, resolved: &ResolvedConfig) -> Result<()> {
    write_json(
        &out_dir.join("config.json"),
        &ConfigSnapshot { config_hash: &resolved.hash, config: &resolved.config },
    )
}

fn make_world(cfg: &Config) -> Result<WorldSpec> {
    Ok(generate_world(cfg.world.seed, cfg.world.entities, cfg.world.chains, cfg.world.distractors)?)
}

/// `gen-world`: write the world document and the question pool a training
/// run with this configuration would use.
pub fn cmd_gen_world(resolved: &ResolvedConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let world = make_world(&resolved.config)?;
    let questions = question_pool(&world, &resolved.config)?;
    write_world(&out.join("world.json"), &world, &resolved.hash)?;
    write_questions(&out.join("questions.jsonl"), &questions, &resolved.hash)?;
    write_config_snapshot(out, resolved)?;
    println!(
        "wrote world.json ({} entities, {} chains, {} documents) and questions.jsonl \
         ({} questions of {} hops) to {}",
        world.entities.len(),
        world.chain_count(),
        world.documents.len(),
        questions.len(),
        resolved.config.world.question_hops,
        out.display()
    );
    Ok(())
}

/// `train`: run the full loop, streaming artifacts into the output
/// directory named by the configuration.
pub fn cmd_train(resolved: &ResolvedConfig) -> Result<()> {
    let out = Path::new(&resolved.config.out_dir).to_owned();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_config_snapshot(&out, resolved)?;

    let mut writer = RunWriter::new(&out, &resolved.hash)?;
    let run: TrainingRun = train(&resolved.config, &mut writer).context("training failed")?;
    writer.finish()?;

    write_world(&out.join("world.json"), &run.world, &resolved.hash)?;
    write_questions(&out.join("questions.jsonl"), &run.questions, &resolved.hash)?;
    write_checkpoint(&out.join("checkpoint.json"), &run.config, &resolved.hash, &run.policy)?;

    let last = run.curve.last().expect("steps >= 1 is enforced by validation");
    println!(
        "trained {} steps (batch {}, group {}); final step: answer reward {:.4}, \
         sufficiency rate {:.4}, filter rate {:.4}",
        run.curve.len(),
        resolved.config.optimizer.batch_questions,
        resolved.config.rollout.group_size,
        last.answer_reward,
        last.suff_rate,
        last.filter_rate
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

/// `eval`: roll out a checkpointed policy once per question and report
/// answer metrics plus the reasoning-depth table.
pub fn cmd_eval(
    checkpoint_path: &Path,
    world_path: &Path,
    questions_path: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint_path)?;
    let world_file = load_world(world_path)?;
    if world_file.config_hash != ck.config_hash {
        log::warn!(
            "world file came from config {} but the checkpoint from {}; evaluating anyway",
            world_file.config_hash,
            ck.config_hash
        );
    }
    let questions = load_questions(questions_path)?;
    if questions.is_empty() {
        bail!("{} holds no questions", questions_path.display());
    }

    let rollout_cfg: tires_core::policy::RolloutConfig = (&ck.config.rollout).into();
    let seed = seed.unwrap_or(ck.config.seed);
    let outcome = eval_policy(&ck.policy, &world_file.world, &questions, &rollout_cfg, seed);

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (report_path, summary_path) = write_eval_report(out, &outcome, &ck.config_hash)?;

    println!(
        "evaluated {} questions (skipped {}): EM {:.4}  F1 {:.4}  CEM {:.4}  \
         sufficiency rate {:.4}  avg retrievals {:.2}",
        outcome.report.n,
        outcome.report.skipped,
        outcome.report.em,
        outcome.report.f1,
        outcome.report.cem,
        outcome.suff_rate,
        outcome.report.avg_retrievals
    );
    println!("{}", outcome.categories);
    println!("wrote {} and {}", report_path.display(), summary_path.display());
    Ok(())
}

struct LoadedTrace {
    line_no: usize,
    question: Question,
    trajectory: Trajectory,
}

/// Reads a trajectory JSONL file against a question set, collecting
/// readable records and an error list describing the rest.
fn load_traces(
    traces_path: &Path,
    questions: &[Question],
) -> Result<(Vec<LoadedTrace>, Vec<String>)> {
    let by_id: HashMap<&str, &Question> =
        questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let text = fs::read_to_string(traces_path)
        .with_context(|| format!("reading {}", traces_path.display()))?;

    let mut loaded = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let trajectory: Trajectory = match serde_json::from_str(line) {
            Ok(t) => t,
            Err(e) => {
                errors.push(format!("line {line_no}: invalid record: {e}"));
                continue;
            }
        };
        let Some(&question) = by_id.get(trajectory.question_id.as_str()) else {
            errors.push(format!(
                "line {line_no}: unknown question {:?}",
                trajectory.question_id
            ));
            continue;
        };
        // Structural validation: the stored segments must form a legal
        // trajectory. Truncated rollouts without a final answer are kept —
        // the trainer records those too — and score 0 on the answer signal.
        if let Err(diags) = parse_partial(&render_trajectory(&trajectory)) {
            let summary: Vec<String> = diags.iter().map(|d| d.message.clone()).collect();
            errors.push(format!("line {line_no}: {}", summary.join("; ")));
            continue;
        }
        loaded.push(LoadedTrace { line_no, question: question.clone(), trajectory });
    }
    Ok((loaded, errors))
}

/// `score-trace`: reward every stored trajectory against its question,
/// writing one CSV row per readable record. Unreadable records are listed
/// on stderr and make the command exit nonzero after the scores are
/// written.
pub fn cmd_score_trace(
    traces_path: &Path,
    world_path: &Path,
    questions_path: &Path,
    out: &Path,
    anneal: f64,
    judge_cfg: &JudgeSection,
) -> Result<()> {
    let world_file = load_world(world_path)?;
    let questions = load_questions(questions_path)?;
    let (traces, errors) = load_traces(traces_path, &questions)?;

    let mut judge = make_judge(judge_cfg, &world_file.world)?;
    let weights = RewardWeights::default();

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let scores_path = out.join("scores.csv");
    let mut w = create_scores_csv(&scores_path, &world_file.config_hash)?;
    for t in &traces {
        let b = tires_core::reward::score_trajectory(
            judge.as_mut(),
            &t.question,
            &t.trajectory,
            &weights,
            anneal,
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            t.line_no,
            t.question.question_id,
            b.answer,
            b.sufficient,
            b.thinking,
            b.reflect,
            b.anneal,
            b.total
        )?;
    }
    w.flush().context("flushing scores.csv")?;

    println!("scored {} trace(s) into {}", traces.len(), scores_path.display());
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("{}: {e}", traces_path.display());
        }
        bail!("{} unreadable trace record(s)", errors.len());
    }
    Ok(())
}

/// `replay`: re-render stored trajectories as tagged text with their reward
/// breakdown alongside.
pub fn cmd_replay(
    traces_path: &Path,
    world_path: &Path,
    questions_path: &Path,
    index: Option<usize>,
) -> Result<()> {
    let world_file = load_world(world_path)?;
    let questions = load_questions(questions_path)?;
    let (mut traces, errors) = load_traces(traces_path, &questions)?;
    if let Some(wanted) = index {
        traces.retain(|t| t.line_no == wanted);
        if traces.is_empty() {
            bail!("no readable trace on line {wanted} of {}", traces_path.display());
        }
    }

    let mut judge = make_judge(&JudgeSection::default(), &world_file.world)?;
    let weights = RewardWeights::default();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for t in &traces {
        let b = tires_core::reward::score_trajectory(
            judge.as_mut(),
            &t.question,
            &t.trajectory,
            &weights,
            1.0,
        )?;
        writeln!(out, "=== line {}: {} ===", t.line_no, t.question.question_id)?;
        writeln!(out, "question: {}", t.question.text)?;
        writeln!(out, "gold:     {}", t.question.gold_answer)?;
        writeln!(out)?;
        writeln!(out, "{}", render_trajectory(&t.trajectory))?;
        writeln!(out)?;
        writeln!(
            out,
            "rewards:  answer {}  sufficient {}  thinking {}  reflect {}  total {}",
            b.answer, b.sufficient, b.thinking, b.reflect, b.total
        )?;
        writeln!(out)?;
    }

    if !errors.is_empty() {
        for e in &errors {
            eprintln!("{}: {e}", traces_path.display());
        }
        bail!("{} unreadable trace record(s)", errors.len());
    }
    Ok(())
}

/// `judge-stub`: a line-JSON judge counterparty for `cmd:` endpoints. Reads
/// requests on stdin, answers on stdout, exits at end of input.
///
/// Fixed scores can be pinned with the flags; otherwise sufficiency is 1
/// when the gold answer appears in retrieved information, and thinking
/// defaults to 0.5.
pub fn cmd_judge_stub(sufficient: Option<f64>, thinking: Option<f64>) -> Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("judge-stub: skipping malformed request: {e}");
                continue;
            }
        };
        let Some(request_id) = req.get("request_id").cloned() else {
            eprintln!("judge-stub: request without request_id");
            continue;
        };
        let kind = req.get("kind").and_then(|k| k.as_str()).unwrap_or("");
        let gold = req.get("gold").and_then(|g| g.as_str()).unwrap_or("");
        let trajectory = req.get("trajectory").and_then(|t| t.as_str()).unwrap_or("");
        let score = match kind {
            "sufficient" => sufficient.unwrap_or_else(|| heuristic_sufficient(trajectory, gold)),
            "thinking" => thinking.unwrap_or(0.5),
            other => {
                eprintln!("judge-stub: unknown request kind {other:?}, scoring 0");
                0.0
            }
        };
        let reply = serde_json::json!({ "request_id": request_id, "score": score });
        writeln!(out, "{reply}")?;
        out.flush()?;
    }
    Ok(())
}

/// Gold-containment heuristic over the rendered trajectory's information
/// segments.
fn heuristic_sufficient(trajectory: &str, gold: &str) -> f64 {
    let Ok(parsed) = parse_partial(trajectory) else { return 0.0 };
    let hit = !gold.is_empty()
        && parsed
            .trajectory
            .segments
            .iter()
            .any(|s| s.kind == SegmentKind::Information && s.text.contains(gold));
    if hit {
        1.0
    } else {
        0.0
    }
}
