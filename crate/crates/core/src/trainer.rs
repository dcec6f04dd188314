//! End-to-end training loop: questions → rollouts → rewards → advantages
//! → policy updates, with per-step curves and a full advantage audit trail.
//!
//! Determinism contract: every random draw in a run comes from a single
//! master stream seeded with `config.seed`, consumed in a documented order
//! (see [`train`]), so a run is exactly reproducible — and externally
//! replayable — from its configuration alone.

use std::collections::HashSet;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{
    filter_group, finalize, finalize_batch, DifficultyParams, GroupBatch, NormScope,
};
use crate::config::{Config, JudgeMode, JudgeSection, OptimizerMode, RolloutSection};
use crate::judge::{ExternalJudge, Judge, JudgeError, OracleJudge};
use crate::metrics::{evaluate, MetricsReport, ThinkingCategoryCounts};
use crate::policy::{
    rollout_group, rollout_one, update_policy, PolicyError, RolloutConfig, TabularPolicy,
    TrainSample, UpdateConfig,
};
use crate::reward::{anneal_weight, score_trajectory, RewardBreakdown, RewardWeights, ThinkingRubric};
use crate::trace::Trajectory;
use crate::world::{
    generate_world, oracle_sufficient, sample_question, Question, WorldError, WorldSpec,
};

/// Consecutive all-filtered steps tolerated before training aborts.
pub const COLLAPSE_GUARD_STEPS: u64 = 50;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("world generation failed: {0}")]
    World(#[from] WorldError),
    #[error("judge failure: {0}")]
    Judge(#[from] JudgeError),
    #[error("policy update failed: {0}")]
    Policy(#[from] PolicyError),
    #[error(
        "every group was filtered for {COLLAPSE_GUARD_STEPS} consecutive steps \
         (collapse guard tripped at step {step})"
    )]
    Collapsed { step: u64 },
    #[error("training pool exhausted before step {step}: the filter removed every question")]
    PoolExhausted { step: u64 },
}

/// Per-step curve point (means over every rollout generated that step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub answer_reward: f64,
    pub thinking_reward: f64,
    pub suff_rate: f64,
    /// Fraction of this step's groups dropped by the filter.
    pub filter_rate: f64,
}

/// One advantage-audit line: everything the pipeline computed for one
/// rollout. Dropped groups report their would-have-been group-local
/// advantages with `filtered = true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub step: u64,
    pub question_id: String,
    pub rollout_index: usize,
    pub r_sum: f64,
    pub raw_advantage: f64,
    pub suff_adv: f64,
    pub think_adv: f64,
    pub answer_adv: f64,
    pub penalty: f64,
    pub weight: f64,
    pub final_advantage: f64,
    pub filtered: bool,
}

/// Callbacks fired while training runs; all default to no-ops.
pub trait TrainObserver {
    fn on_step(&mut self, _stats: &StepStats) {}
    fn on_audit(&mut self, _row: &AuditRow) {}
    fn on_rollout(
        &mut self,
        _step: u64,
        _question: &Question,
        _trajectory: &Trajectory,
        _breakdown: &RewardBreakdown<f64>,
    ) {
    }
}

/// The silent observer.
impl TrainObserver for () {}

/// A completed run: inputs, per-step curve, and the trained policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRun {
    pub config: Config,
    pub world: WorldSpec,
    pub questions: Vec<Question>,
    pub curve: Vec<StepStats>,
    pub policy: TabularPolicy<f64>,
}

impl From<&RolloutSection> for RolloutConfig {
    fn from(s: &RolloutSection) -> Self {
        RolloutConfig {
            group_size: s.group_size,
            max_steps: s.max_steps,
            max_retrievals: s.max_retrievals,
            top_k: s.top_k,
        }
    }
}

/// Builds the configured judge: the in-process oracle, or a client for the
/// external endpoint.
pub fn make_judge<'w>(
    cfg: &JudgeSection,
    world: &'w WorldSpec,
) -> Result<Box<dyn Judge + 'w>, JudgeError> {
    match cfg.mode {
        JudgeMode::Oracle => Ok(Box::new(OracleJudge::new(world, ThinkingRubric::default()))),
        JudgeMode::External => Ok(Box::new(ExternalJudge::connect(
            &cfg.endpoint,
            Duration::from_secs(cfg.timeout_secs),
        )?)),
    }
}

/// Draws the run's question pool from the master stream: one seed per pool
/// slot, each expanded by [`sample_question`].
fn draw_question_pool(
    world: &WorldSpec,
    cfg: &Config,
    master: &mut ChaCha8Rng,
) -> Result<Vec<Question>, WorldError> {
    let seeds: Vec<u64> = (0..cfg.world.pool).map(|_| master.next_u64()).collect();
    seeds.iter().map(|&s| sample_question(world, cfg.world.question_hops, s)).collect()
}

/// The question pool a run with this configuration would train on — the
/// first `world.pool` draws of the master stream (see [`train`]). Exposed so
/// world/question exports and evaluations reuse exactly the training pool.
pub fn question_pool(world: &WorldSpec, cfg: &Config) -> Result<Vec<Question>, WorldError> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    draw_question_pool(world, cfg, &mut master)
}

/// Runs the full training loop.
///
/// Master-stream draw order (the reproducibility contract):
///
/// 1. `world.pool` draws — one question seed per pool slot;
/// 2. per step: `optimizer.batch_questions` draws — indices into the
///    *currently active* pool (`draw % active_len`);
/// 3. then, per batch question in order: one draw — that group's rollout
///    seed, expanded by [`rollout_group`].
///
/// Each step: generate a group per batch question, score every trajectory,
/// apply the group filter, normalize advantages over the kept groups
/// (per-group for group-relative mode, whole-batch for batch-relative
/// mode), shape them with the consistency penalty and difficulty weight,
/// and ascend the clipped surrogate. Aborts if the filter drops every
/// group for [`COLLAPSE_GUARD_STEPS`] consecutive steps, or if permanent
/// removal empties the pool.
pub fn train(cfg: &Config, observer: &mut dyn TrainObserver) -> Result<TrainingRun, TrainError> {
    cfg.validate()?;
    let world = generate_world(
        cfg.world.seed,
        cfg.world.entities,
        cfg.world.chains,
        cfg.world.distractors,
    )?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let questions = draw_question_pool(&world, cfg, &mut master)?;

    let mut judge = make_judge(&cfg.judge, &world)?;
    let mut policy = TabularPolicy::new(cfg.rollout.temperature);
    let rollout_cfg = RolloutConfig::from(&cfg.rollout);
    let weights = RewardWeights {
        thinking: cfg.reward.w_thinking,
        sufficiency: cfg.reward.w_sufficiency,
        reflection: cfg.reward.w_reflection,
    };
    let difficulty = DifficultyParams {
        min_weight: cfg.difficulty.min_weight,
        max_weight: cfg.difficulty.max_weight,
        midpoint: cfg.difficulty.midpoint,
        steepness: cfg.difficulty.steepness,
    };
    let update_cfg = UpdateConfig {
        learning_rate: cfg.optimizer.learning_rate,
        clip: cfg.optimizer.clip,
        inner_iters: cfg.optimizer.inner_iters,
    };
    let scope = match cfg.optimizer.mode {
        OptimizerMode::Grpo => NormScope::Group,
        OptimizerMode::ReinforcePlusPlus => NormScope::Batch,
    };

    let total_steps = cfg.optimizer.steps;
    let mut active: Vec<usize> = (0..questions.len()).collect();
    let mut curve = Vec::with_capacity(total_steps as usize);
    let mut consecutive_all_filtered = 0u64;

    for step in 0..total_steps {
        if active.is_empty() {
            return Err(TrainError::PoolExhausted { step });
        }
        let anneal = anneal_weight::<f64>(step, total_steps, cfg.reward.schedule);

        let batch_indices: Vec<usize> = (0..cfg.optimizer.batch_questions)
            .map(|_| active[(master.next_u64() % active.len() as u64) as usize])
            .collect();

        let mut batch = Vec::with_capacity(batch_indices.len());
        for &qidx in &batch_indices {
            let q = &questions[qidx];
            let group_seed = master.next_u64();
            let rollouts = rollout_group(
                &policy,
                &world,
                q,
                &rollout_cfg,
                &mut ChaCha8Rng::seed_from_u64(group_seed),
            );
            let mut rewards = Vec::with_capacity(rollouts.len());
            for r in &rollouts {
                let b =
                    score_trajectory(judge.as_mut(), q, &r.trajectory, &weights, anneal)?;
                observer.on_rollout(step, q, &r.trajectory, &b);
                rewards.push(b);
            }
            let group = GroupBatch::new(q.question_id.clone(), rewards);
            batch.push((qidx, rollouts, group));
        }

        let verdicts: Vec<bool> = batch
            .iter()
            .map(|(_, _, g)| {
                !cfg.filter.enabled
                    || filter_group(
                        &g.answer_rewards(),
                        cfg.filter.low,
                        cfg.filter.high,
                        cfg.filter.mode,
                    )
            })
            .collect();
        let kept_groups: Vec<GroupBatch<f64>> = batch
            .iter()
            .zip(&verdicts)
            .filter(|(_, &keep)| keep)
            .map(|((_, _, g), _)| g.clone())
            .collect();
        let kept_records = finalize_batch(
            &kept_groups,
            &difficulty,
            cfg.penalty.lambda,
            cfg.penalty.formula,
            scope,
        );

        // Walk the batch in order, emitting audit rows and collecting
        // training samples from the kept groups.
        let mut samples = Vec::new();
        let mut kept_cursor = 0usize;
        for ((_, rollouts, group), &keep) in batch.iter().zip(&verdicts) {
            let records = if keep {
                kept_cursor += 1;
                kept_records[kept_cursor - 1].clone()
            } else {
                finalize(group, &difficulty, cfg.penalty.lambda, cfg.penalty.formula)
            };
            for (i, (rollout, rec)) in rollouts.iter().zip(&records).enumerate() {
                observer.on_audit(&AuditRow {
                    step,
                    question_id: group.question_id.clone(),
                    rollout_index: i,
                    r_sum: group.rewards[i].total,
                    raw_advantage: rec.raw,
                    suff_adv: rec.suff_adv,
                    think_adv: rec.think_adv,
                    answer_adv: rec.answer_adv,
                    penalty: rec.penalty,
                    weight: rec.weight,
                    final_advantage: rec.final_adv,
                    filtered: !keep,
                });
                if keep {
                    samples.push(TrainSample::new(rollout, rec.final_adv));
                }
            }
        }

        if cfg.filter.remove_permanently {
            let dropped: HashSet<usize> = batch
                .iter()
                .zip(&verdicts)
                .filter(|(_, &keep)| !keep)
                .map(|((qidx, _, _), _)| *qidx)
                .collect();
            if !dropped.is_empty() {
                active.retain(|i| !dropped.contains(i));
            }
        }

        if samples.is_empty() {
            consecutive_all_filtered += 1;
            log::warn!(
                "step {step}: every group filtered ({consecutive_all_filtered} in a row)"
            );
        } else {
            consecutive_all_filtered = 0;
            update_policy(&mut policy, &samples, &update_cfg)?;
        }

        let rollout_count: usize = batch.iter().map(|(_, r, _)| r.len()).sum();
        let mean = |f: &dyn Fn(&RewardBreakdown<f64>) -> f64| -> f64 {
            batch
                .iter()
                .flat_map(|(_, _, g)| g.rewards.iter())
                .map(f)
                .sum::<f64>()
                / rollout_count as f64
        };
        let stats = StepStats {
            step,
            answer_reward: mean(&|b| b.answer),
            thinking_reward: mean(&|b| b.thinking),
            suff_rate: mean(&|b| b.sufficient),
            filter_rate: verdicts.iter().filter(|&&k| !k).count() as f64
                / verdicts.len() as f64,
        };
        observer.on_step(&stats);
        curve.push(stats);

        if consecutive_all_filtered >= COLLAPSE_GUARD_STEPS {
            return Err(TrainError::Collapsed { step });
        }
    }

    drop(judge);
    Ok(TrainingRun { config: cfg.clone(), world, questions, curve, policy })
}

/// Greedy-free evaluation of a policy: one rollout per question on a
/// dedicated seed stream, scored with the standard metrics plus the
/// oracle sufficiency rate.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: MetricsReport<f64>,
    pub categories: ThinkingCategoryCounts,
    /// Fraction of trajectories whose retrieved evidence sufficed.
    pub suff_rate: f64,
    pub items: Vec<(Question, Trajectory)>,
}

pub fn eval_policy(
    policy: &TabularPolicy<f64>,
    world: &WorldSpec,
    questions: &[Question],
    rollout_cfg: &RolloutConfig,
    seed: u64,
) -> EvalOutcome {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<(Question, Trajectory)> = questions
        .iter()
        .map(|q| {
            let s = master.next_u64();
            let r = rollout_one(policy, world, q, rollout_cfg, &mut ChaCha8Rng::seed_from_u64(s));
            (q.clone(), r.trajectory)
        })
        .collect();
    let suff_rate = if items.is_empty() {
        0.0
    } else {
        items.iter().filter(|(q, t)| oracle_sufficient(q, t)).count() as f64
            / items.len() as f64
    };
    let (report, categories) = evaluate(&items);
    EvalOutcome { report, categories, suff_rate, items }
}
