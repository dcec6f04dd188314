//! On-disk artifact formats: world and question exports, training outputs
//! (curves, audit log, trajectories, checkpoint), and evaluation reports.
//! Every file embeds the config hash of the run that produced it — JSON
//! documents as a `config_hash` field, JSONL records in their own fields or
//! metadata, CSVs as a leading `# config_hash=…` comment line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tires_core::config::Config;
use tires_core::metrics::ThinkingCategory;
use tires_core::trainer::{AuditRow, EvalOutcome, StepStats, TrainObserver};
use tires_core::trace::Trajectory;
use tires_core::world::{Question, Triple, WorldSpec};
use tires_core::TabularPolicy64;
use tires_core::reward::RewardBreakdown;

/// Format version written into checkpoints.
pub const CHECKPOINT_VERSION: u32 = 1;

/// A saved policy bundled with the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: Config,
    pub policy: TabularPolicy64,
}

/// The world document written by `gen-world` and `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub world: WorldSpec,
}

/// One exported question: the hop count plus the gold chain itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub text: String,
    pub hops: usize,
    pub gold_answer: String,
    pub hop_chain: Vec<Triple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl QuestionRecord {
    pub fn from_question(q: &Question, config_hash: &str) -> Self {
        QuestionRecord {
            question_id: q.question_id.clone(),
            text: q.text.clone(),
            hops: q.hops.len(),
            gold_answer: q.gold_answer.clone(),
            hop_chain: q.hops.clone(),
            config_hash: Some(config_hash.to_owned()),
        }
    }

    pub fn into_question(self) -> Result<Question> {
        if self.hops != self.hop_chain.len() {
            bail!(
                "question {}: hops says {} but the chain has {} triples",
                self.question_id,
                self.hops,
                self.hop_chain.len()
            );
        }
        match self.hop_chain.last() {
            Some(last) if last.object != self.gold_answer => bail!(
                "question {}: gold answer {:?} is not the final hop object {:?}",
                self.question_id,
                self.gold_answer,
                last.object
            ),
            None => bail!("question {}: empty hop chain", self.question_id),
            _ => {}
        }
        Ok(Question {
            question_id: self.question_id,
            text: self.text,
            hops: self.hop_chain,
            gold_answer: self.gold_answer,
        })
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing artifact")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_checkpoint(
    path: &Path,
    config: &Config,
    config_hash: &str,
    policy: &TabularPolicy64,
) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_owned(),
        config: config.clone(),
        policy: policy.clone(),
    };
    write_json(path, &ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = serde_json::from_str(&read_file(path)?)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    if ck.version != CHECKPOINT_VERSION {
        bail!(
            "checkpoint {} is version {}, this build reads version {CHECKPOINT_VERSION}",
            path.display(),
            ck.version
        );
    }
    Ok(ck)
}

pub fn write_world(path: &Path, world: &WorldSpec, config_hash: &str) -> Result<()> {
    write_json(path, &WorldFile { config_hash: config_hash.to_owned(), world: world.clone() })
}

pub fn load_world(path: &Path) -> Result<WorldFile> {
    serde_json::from_str(&read_file(path)?)
        .with_context(|| format!("parsing world file {}", path.display()))
}

pub fn write_questions(path: &Path, questions: &[Question], config_hash: &str) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for q in questions {
        let record = QuestionRecord::from_question(q, config_hash);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut questions = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad question record", path.display(), i + 1))?;
        questions.push(record.into_question()?);
    }
    Ok(questions)
}

/// CSV headers, kept in one place so writers and tests agree.
pub const CURVE_HEADER: &str = "step,answer_reward,thinking_reward,suff_rate,filter_rate";
pub const AUDIT_HEADER: &str =
    "step,question_id,rollout_index,r_sum,A_i,A_S,A_T,A_A,penalty,W,A_final,filtered";
pub const REPORT_HEADER: &str = "question_id,em,f1,cem,retrievals,think_chars,category";
pub const SCORES_HEADER: &str =
    "line,question_id,answer,sufficient,thinking,reflect,anneal,total";

fn create_csv(path: &Path, config_hash: &str, header: &str) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config_hash={config_hash}")?;
    writeln!(w, "{header}")?;
    Ok(w)
}

/// Opens the per-trace score CSV written by `score-trace`.
pub fn create_scores_csv(path: &Path, config_hash: &str) -> Result<BufWriter<File>> {
    create_csv(path, config_hash, SCORES_HEADER)
}

/// The stable wire token for a category (snake_case, no spaces).
pub fn category_token(c: ThinkingCategory) -> &'static str {
    match c {
        ThinkingCategory::Underthinking => "underthinking",
        ThinkingCategory::GoodThinking => "good_thinking",
        ThinkingCategory::Overthinking => "overthinking",
    }
}

/// Streams training events to `curves.csv`, `audit.csv`, and
/// `trajectories.jsonl` as they happen. I/O failures are remembered and
/// surfaced by [`RunWriter::finish`], since observer callbacks cannot fail.
pub struct RunWriter {
    config_hash: String,
    curves: BufWriter<File>,
    audit: BufWriter<File>,
    trajectories: BufWriter<File>,
    error: Option<anyhow::Error>,
}

impl RunWriter {
    pub fn new(out_dir: &Path, config_hash: &str) -> Result<Self> {
        Ok(RunWriter {
            config_hash: config_hash.to_owned(),
            curves: create_csv(&out_dir.join("curves.csv"), config_hash, CURVE_HEADER)?,
            audit: create_csv(&out_dir.join("audit.csv"), config_hash, AUDIT_HEADER)?,
            trajectories: BufWriter::new(
                File::create(out_dir.join("trajectories.jsonl"))
                    .context("creating trajectories.jsonl")?,
            ),
            error: None,
        })
    }

    fn record(&mut self, result: std::io::Result<()>, what: &str) {
        if self.error.is_none() {
            if let Err(e) = result {
                self.error = Some(anyhow!(e).context(format!("writing {what}")));
            }
        }
    }

    /// Flushes everything and reports the first write error, if any.
    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.curves.flush().context("flushing curves.csv")?;
        self.audit.flush().context("flushing audit.csv")?;
        self.trajectories.flush().context("flushing trajectories.jsonl")
    }
}

impl TrainObserver for RunWriter {
    fn on_step(&mut self, s: &StepStats) {
        let row = format!(
            "{},{},{},{},{}\n",
            s.step, s.answer_reward, s.thinking_reward, s.suff_rate, s.filter_rate
        );
        let r = self.curves.write_all(row.as_bytes());
        self.record(r, "curves.csv");
    }

    fn on_audit(&mut self, a: &AuditRow) {
        let row = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            a.step,
            a.question_id,
            a.rollout_index,
            a.r_sum,
            a.raw_advantage,
            a.suff_adv,
            a.think_adv,
            a.answer_adv,
            a.penalty,
            a.weight,
            a.final_advantage,
            a.filtered
        );
        let r = self.audit.write_all(row.as_bytes());
        self.record(r, "audit.csv");
    }

    fn on_rollout(
        &mut self,
        step: u64,
        _question: &Question,
        trajectory: &Trajectory,
        breakdown: &RewardBreakdown<f64>,
    ) {
        let mut record = trajectory.clone();
        record.meta = serde_json::json!({
            "step": step,
            "config_hash": self.config_hash,
            "reward": breakdown,
        });
        let r = serde_json::to_string(&record)
            .map_err(std::io::Error::from)
            .and_then(|line| {
                self.trajectories.write_all(line.as_bytes())?;
                self.trajectories.write_all(b"\n")
            });
        self.record(r, "trajectories.jsonl");
    }
}

/// JSON summary of an evaluation, written beside the per-question report.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub n: usize,
    pub skipped: usize,
    pub em: f64,
    pub f1: f64,
    pub cem: f64,
    pub avg_retrievals: f64,
    pub avg_think_chars: f64,
    pub suff_rate: f64,
    pub categories: tires_core::metrics::ThinkingCategoryCounts,
}

/// Writes `report.csv` and `summary.json` for an evaluation; returns the
/// paths written.
pub fn write_eval_report(
    out_dir: &Path,
    outcome: &EvalOutcome,
    config_hash: &str,
) -> Result<(PathBuf, PathBuf)> {
    let report_path = out_dir.join("report.csv");
    let mut w = create_csv(&report_path, config_hash, REPORT_HEADER)?;
    for row in &outcome.report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.question_id,
            row.em,
            row.f1,
            row.cem,
            row.retrievals,
            row.think_chars,
            category_token(row.category)
        )?;
    }
    w.flush().context("flushing report.csv")?;

    let summary_path = out_dir.join("summary.json");
    let summary = EvalSummary {
        config_hash: config_hash.to_owned(),
        n: outcome.report.n,
        skipped: outcome.report.skipped,
        em: outcome.report.em,
        f1: outcome.report.f1,
        cem: outcome.report.cem,
        avg_retrievals: outcome.report.avg_retrievals,
        avg_think_chars: outcome.report.avg_think_chars,
        suff_rate: outcome.suff_rate,
        categories: outcome.categories,
    };
    write_json(&summary_path, &summary)?;
    Ok((report_path, summary_path))
}
