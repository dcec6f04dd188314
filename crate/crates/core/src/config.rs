//! Run configuration: typed sections, defaults, and validation.
//!
//! The configuration covers the whole experiment pipeline — world
//! generation, rollouts, reward weighting, advantage shaping, filtering,
//! optimization, and judge binding. Every field has a default, so an
//! empty document is a valid, runnable configuration; unknown keys are
//! rejected rather than ignored. Validation reports the offending key and
//! the constraint it violates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{FilterMode, PenaltyFormula};
use crate::reward::AnnealSchedule;
use crate::world::CHAIN_HOPS;

/// A configuration key/constraint violation.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("config key `{key}`: {constraint}")]
pub struct ConfigError {
    pub key: &'static str,
    pub constraint: String,
}

fn bad(key: &'static str, constraint: impl Into<String>) -> ConfigError {
    ConfigError { key, constraint: constraint.into() }
}

/// Knowledge-graph and question-sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub entities: usize,
    pub chains: usize,
    pub distractors: usize,
    /// Hops per sampled training question.
    pub question_hops: usize,
    /// Size of the sampled training-question pool.
    pub pool: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { seed: 0, entities: 60, chains: 8, distractors: 12, question_hops: 3, pool: 64 }
    }
}

/// Episode-generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSection {
    /// Rollouts per question (group size G).
    pub group_size: usize,
    pub max_steps: usize,
    pub max_retrievals: usize,
    /// Documents returned per search.
    pub top_k: usize,
    /// Softmax temperature during rollout.
    pub temperature: f64,
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection { group_size: 5, max_steps: 10, max_retrievals: 8, top_k: 5, temperature: 1.0 }
    }
}

/// Component reward weights and the anneal schedule for the shaped part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    /// Weight of the thinking-quality component (short key: `w_t`).
    #[serde(alias = "w_t")]
    pub w_thinking: f64,
    /// Weight of the sufficiency component (short key: `w_s`).
    #[serde(alias = "w_s")]
    pub w_sufficiency: f64,
    /// Weight of the reflection component (short key: `w_r`).
    #[serde(alias = "w_r")]
    pub w_reflection: f64,
    pub schedule: AnnealSchedule,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            w_thinking: 0.6,
            w_sufficiency: 0.3,
            w_reflection: 0.3,
            schedule: AnnealSchedule::default(),
        }
    }
}

/// Difficulty-weight curve parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DifficultySection {
    pub min_weight: f64,
    pub max_weight: f64,
    pub midpoint: f64,
    pub steepness: f64,
}

impl Default for DifficultySection {
    fn default() -> Self {
        DifficultySection { min_weight: 0.4, max_weight: 1.5, midpoint: 0.75, steepness: 10.0 }
    }
}

/// Consistency-penalty parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub lambda: f64,
    pub formula: PenaltyFormula,
}

impl Default for PenaltySection {
    fn default() -> Self {
        PenaltySection { lambda: 0.1, formula: PenaltyFormula::default() }
    }
}

/// Group-filtering parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub enabled: bool,
    pub low: f64,
    pub high: f64,
    pub mode: FilterMode,
    /// When true, a dropped group's question leaves the training pool for
    /// good; when false (default) it is only skipped for the step.
    pub remove_permanently: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            enabled: true,
            low: 0.1,
            high: 0.9,
            mode: FilterMode::default(),
            remove_permanently: false,
        }
    }
}

/// Advantage-normalization scope of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerMode {
    /// Group-relative: advantages normalized within each question's group.
    #[default]
    #[serde(rename = "grpo")]
    Grpo,
    /// Batch-relative: raw advantages normalized across the whole batch.
    #[serde(rename = "reinforce++")]
    ReinforcePlusPlus,
}

/// Optimization-loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub mode: OptimizerMode,
    /// Training steps T (also the anneal horizon).
    pub steps: u64,
    /// Questions sampled per step.
    pub batch_questions: usize,
    /// Gradient passes per batch (μ).
    pub inner_iters: usize,
    /// Clip half-width ε.
    pub clip: f64,
    /// KL coefficient β. Must be 0: no KL term is implemented, and the
    /// published setting disables it anyway.
    pub kl_beta: f64,
    pub learning_rate: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            mode: OptimizerMode::Grpo,
            steps: 200,
            batch_questions: 12,
            inner_iters: 2,
            clip: 0.2,
            kl_beta: 0.0,
            learning_rate: 0.1,
        }
    }
}

/// Which sufficiency/thinking judge scores trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    /// Exact programmatic judge backed by the generated world.
    #[default]
    Oracle,
    /// Line-delimited JSON judge over TCP or a subprocess.
    External,
}

/// Judge binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeSection {
    pub mode: JudgeMode,
    /// `host:port` or `cmd:program args...`; required in external mode.
    pub endpoint: String,
    pub timeout_secs: u64,
}

impl Default for JudgeSection {
    fn default() -> Self {
        JudgeSection { mode: JudgeMode::Oracle, endpoint: String::new(), timeout_secs: 30 }
    }
}

/// Complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed for question sampling and rollouts.
    pub seed: u64,
    /// Output directory for run artifacts.
    pub out_dir: String,
    pub world: WorldConfig,
    pub rollout: RolloutSection,
    pub reward: RewardSection,
    pub difficulty: DifficultySection,
    pub penalty: PenaltySection,
    pub filter: FilterSection,
    pub optimizer: OptimizerSection,
    pub judge: JudgeSection,
}

impl Config {
    /// Checks every range and cross-field constraint, reporting the first
    /// violation by key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.world;
        if w.chains == 0 {
            return Err(bad("world.chains", "must be at least 1"));
        }
        let needed = w.chains * (CHAIN_HOPS + 1);
        if w.entities < needed {
            return Err(bad(
                "world.entities",
                format!("must be at least {needed} for {} chains", w.chains),
            ));
        }
        if !(1..=CHAIN_HOPS).contains(&w.question_hops) {
            return Err(bad("world.question_hops", format!("must be in 1..={CHAIN_HOPS}")));
        }
        if w.pool == 0 {
            return Err(bad("world.pool", "must be at least 1"));
        }

        let r = &self.rollout;
        if r.group_size < 2 {
            return Err(bad("rollout.group_size", "must be at least 2"));
        }
        if r.max_steps == 0 {
            return Err(bad("rollout.max_steps", "must be at least 1"));
        }
        if r.top_k == 0 {
            return Err(bad("rollout.top_k", "must be at least 1"));
        }
        if !(r.temperature > 0.0 && r.temperature.is_finite()) {
            return Err(bad("rollout.temperature", "must be positive and finite"));
        }

        if !(self.reward.w_thinking >= 0.0 && self.reward.w_thinking.is_finite()) {
            return Err(bad("reward.w_thinking", "must be ≥ 0 and finite"));
        }
        if !(self.reward.w_sufficiency >= 0.0 && self.reward.w_sufficiency.is_finite()) {
            return Err(bad("reward.w_sufficiency", "must be ≥ 0 and finite"));
        }
        if !(self.reward.w_reflection >= 0.0 && self.reward.w_reflection.is_finite()) {
            return Err(bad("reward.w_reflection", "must be ≥ 0 and finite"));
        }

        let d = &self.difficulty;
        if !(d.min_weight > 0.0 && d.min_weight.is_finite()) {
            return Err(bad("difficulty.min_weight", "must be positive"));
        }
        if !(d.max_weight >= d.min_weight && d.max_weight.is_finite()) {
            return Err(bad("difficulty.max_weight", "must be ≥ difficulty.min_weight"));
        }
        if !(0.0..=1.0).contains(&d.midpoint) {
            return Err(bad("difficulty.midpoint", "must be in [0, 1]"));
        }
        if !d.steepness.is_finite() {
            return Err(bad("difficulty.steepness", "must be finite"));
        }

        if !(self.penalty.lambda >= 0.0 && self.penalty.lambda.is_finite()) {
            return Err(bad("penalty.lambda", "must be ≥ 0"));
        }

        let f = &self.filter;
        if !(0.0..=1.0).contains(&f.low) || !(0.0..=1.0).contains(&f.high) || f.low >= f.high {
            return Err(bad("filter.low", "bounds must satisfy 0 ≤ low < high ≤ 1"));
        }

        let o = &self.optimizer;
        if o.steps == 0 {
            return Err(bad("optimizer.steps", "must be at least 1"));
        }
        if o.batch_questions == 0 {
            return Err(bad("optimizer.batch_questions", "must be at least 1"));
        }
        if o.inner_iters == 0 {
            return Err(bad("optimizer.inner_iters", "must be at least 1"));
        }
        if !(o.clip > 0.0 && o.clip < 1.0) {
            return Err(bad("optimizer.clip", "must be in (0, 1)"));
        }
        if o.kl_beta != 0.0 {
            return Err(bad("optimizer.kl_beta", "must be 0 (no KL term is implemented)"));
        }
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(bad("optimizer.learning_rate", "must be positive and finite"));
        }

        let j = &self.judge;
        if j.mode == JudgeMode::External && j.endpoint.trim().is_empty() {
            return Err(bad("judge.endpoint", "required when judge.mode = \"external\""));
        }
        if j.timeout_secs == 0 {
            return Err(bad("judge.timeout_secs", "must be at least 1"));
        }

        Ok(())
    }
}
