//! Per-trajectory reward signals and their annealed combination.
//!
//! A trajectory earns four signals:
//!
//! * **answer** — token-bag F1 of the final answer against the gold answer;
//! * **sufficiency** — 0/1, whether the evidence gathered before answering
//!   covers every hop (judged by the oracle or an external judge);
//! * **thinking** — a `[0, 1]` process score for the reasoning itself;
//! * **reflection** — `-1/0/+1`, whether a second answer fixed or broke the
//!   first one.
//!
//! The total is `answer + a·(w_t·thinking + w_s·sufficiency +
//! w_r·reflection)` where the auxiliary scale `a` is annealed over training
//! by [`anneal_weight`] so that late steps are dominated by answer quality.

use serde::{Deserialize, Serialize};

use crate::judge::{Judge, JudgeError};
use crate::num::{real, Real};
use crate::text::{cover_exact_match, token_f1, words};
use crate::trace::{SegmentKind, Trajectory};
use crate::world::{Question, WorldSpec};

/// Mixing weights for the auxiliary reward signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights<S> {
    pub thinking: S,
    pub sufficiency: S,
    pub reflection: S,
}

impl<S: Real> Default for RewardWeights<S> {
    fn default() -> Self {
        RewardWeights {
            thinking: real(0.6),
            sufficiency: real(0.3),
            reflection: real(0.3),
        }
    }
}

impl<S: Real> RewardWeights<S> {
    /// All-zero weights: the total reduces to the answer reward alone.
    pub fn zero() -> Self {
        RewardWeights { thinking: S::zero(), sufficiency: S::zero(), reflection: S::zero() }
    }
}

/// How the auxiliary-reward scale moves over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnealSchedule {
    /// Sigmoid centered at 90% of training: near 1 early, 0.5 exactly at
    /// the pivot, near 0 at the end. The default.
    #[serde(rename = "main")]
    LateDrop,
    /// The same sigmoid with its arguments transposed, kept as a selectable
    /// variant; starts near 0 and never rises far. Not the default.
    #[serde(rename = "alg1")]
    Transposed,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule::LateDrop
    }
}

/// Auxiliary-reward scale at step `t` of `total` (both in steps).
///
/// The exponent is assembled from integers (`(10t - 9T)/100`) so the pivot
/// `t = 0.9·total` yields exactly 0.5 whenever `0.9·total` is integral.
pub fn anneal_weight<S: Real>(t: u64, total: u64, schedule: AnnealSchedule) -> S {
    let (num_t, num_total) = (t as i64, total as i64);
    let numerator = match schedule {
        AnnealSchedule::LateDrop => 10 * num_t - 9 * num_total,
        AnnealSchedule::Transposed => 10 * num_total - 9 * num_t,
    };
    let x = S::from_i64(numerator).expect("step counts fit the scalar") / real(100.0);
    S::one() / (S::one() + x.exp())
}

/// Answer-correctness reward: token-bag F1 in `[0, 1]`.
pub fn answer_reward<S: Real>(prediction: &str, gold: &str) -> S {
    token_f1(prediction, gold)
}

/// Reflection reward over the ordered answer list.
///
/// Uses the first and last answers: `+1` if reflection turned a wrong
/// answer right (by cover exact match), `-1` if it broke a right one, `0`
/// otherwise — including when there is nothing to compare (fewer than two
/// answers).
pub fn reflect_reward(answers: &[&str], gold: &str) -> i8 {
    if answers.len() < 2 {
        return 0;
    }
    let first = cover_exact_match(answers[0], gold);
    let last = cover_exact_match(answers[answers.len() - 1], gold);
    match (first, last) {
        (0, 1) => 1,
        (1, 0) => -1,
        _ => 0,
    }
}

/// Weights of the four process-quality checks behind the oracle thinking
/// score. Each check contributes its weight when it passes; the sum is
/// clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinkingRubric {
    /// Every entity mentioned in a `<think>` segment appeared earlier — in
    /// the question or in previously retrieved information.
    pub grounded: f64,
    /// Searches walk the hop chain in order without skipping ahead.
    pub ordered: f64,
    /// No two searches issue the identical query.
    pub distinct: f64,
    /// At most `hops + 1` retrievals.
    pub budget: f64,
}

impl Default for ThinkingRubric {
    fn default() -> Self {
        ThinkingRubric { grounded: 0.25, ordered: 0.25, distinct: 0.25, budget: 0.25 }
    }
}

impl ThinkingRubric {
    /// Scores a trajectory's reasoning process deterministically.
    pub fn score(&self, world: &WorldSpec, q: &Question, t: &Trajectory) -> f64 {
        let mut total = 0.0;
        if self.check_grounded(world, q, t) {
            total += self.grounded;
        }
        if self.check_ordered(q, t) {
            total += self.ordered;
        }
        if self.check_distinct(t) {
            total += self.distinct;
        }
        if t.retrieval_count() <= q.hops.len() + 1 {
            total += self.budget;
        }
        total.clamp(0.0, 1.0)
    }

    /// Entities cited while thinking must already be visible: in the
    /// question text or in an earlier `<information>` segment. Vacuously
    /// true when no entity is cited.
    fn check_grounded(&self, world: &WorldSpec, q: &Question, t: &Trajectory) -> bool {
        let entities: std::collections::HashSet<String> =
            world.entities.iter().map(|e| e.to_lowercase()).collect();
        let mut visible: std::collections::HashSet<String> =
            words(&q.text).into_iter().collect();
        for seg in &t.segments {
            match seg.kind {
                SegmentKind::Think => {
                    for token in words(&seg.text) {
                        if entities.contains(&token) && !visible.contains(&token) {
                            return false;
                        }
                    }
                }
                SegmentKind::Information => {
                    visible.extend(words(&seg.text));
                }
                _ => {}
            }
        }
        true
    }

    /// Maps each search to the hop it targets (query mentions that hop's
    /// subject and relation) and demands the matched hop indices never jump
    /// past the frontier. Unmatched (noise) searches don't break order.
    fn check_ordered(&self, q: &Question, t: &Trajectory) -> bool {
        let mut frontier = 0usize;
        for seg in t.segments.iter().filter(|s| s.kind == SegmentKind::Search) {
            let tokens: std::collections::HashSet<String> =
                words(&seg.text).into_iter().collect();
            let matched = q.hops.iter().position(|h| {
                tokens.contains(&h.subject.to_lowercase())
                    && tokens.contains(&h.relation.to_lowercase())
            });
            if let Some(idx) = matched {
                let hop = idx + 1;
                if hop > frontier + 1 {
                    return false;
                }
                frontier = frontier.max(hop);
            }
        }
        true
    }

    /// No repeated identical query (after trimming).
    fn check_distinct(&self, t: &Trajectory) -> bool {
        let mut seen = std::collections::HashSet::new();
        t.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Search)
            .all(|s| seen.insert(s.text.trim().to_owned()))
    }
}

/// Every reward signal for one trajectory, plus the annealed total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<S> {
    /// Token-bag F1 of the final answer, 0 for answer-free traces.
    pub answer: S,
    /// Sufficiency verdict as 0/1.
    pub sufficient: S,
    /// Thinking-quality score in `[0, 1]`.
    pub thinking: S,
    /// Reflection outcome as -1/0/+1.
    pub reflect: S,
    /// Auxiliary scale used for this trajectory's step.
    pub anneal: S,
    /// `answer + anneal·(w_t·thinking + w_s·sufficient + w_r·reflect)`.
    pub total: S,
}

impl<S: Real> RewardBreakdown<S> {
    pub fn new(
        answer: S,
        sufficient: bool,
        thinking: S,
        reflect: i8,
        weights: &RewardWeights<S>,
        anneal: S,
    ) -> Self {
        let sufficient = if sufficient { S::one() } else { S::zero() };
        let reflect = real::<S>(f64::from(reflect));
        let total = total_reward(answer, sufficient, thinking, reflect, weights, anneal);
        RewardBreakdown { answer, sufficient, thinking, reflect, anneal, total }
    }
}

/// The combined scalar reward.
pub fn total_reward<S: Real>(
    answer: S,
    sufficient: S,
    thinking: S,
    reflect: S,
    weights: &RewardWeights<S>,
    anneal: S,
) -> S {
    answer
        + anneal
            * (weights.thinking * thinking
                + weights.sufficiency * sufficient
                + weights.reflection * reflect)
}

/// Scores one trajectory end to end through a judge.
///
/// The sufficiency judge sees the answer-stripped reasoning view; the
/// thinking judge sees the full trajectory. Traces without an answer score
/// 0 on the answer signal but are otherwise judged normally.
pub fn score_trajectory<S: Real>(
    judge: &mut dyn Judge,
    q: &Question,
    t: &Trajectory,
    weights: &RewardWeights<S>,
    anneal: S,
) -> Result<RewardBreakdown<S>, JudgeError> {
    let answer = match t.final_answer() {
        Ok(pred) => answer_reward::<S>(pred, &q.gold_answer),
        Err(_) => S::zero(),
    };
    let sufficient = judge.sufficient(q, &t.reasoning_prefix(), &q.gold_answer)?;
    let thinking = real::<S>(judge.thinking(q, t, &q.gold_answer)?);
    let reflect = reflect_reward(&t.intermediate_answers(), &q.gold_answer);
    Ok(RewardBreakdown::new(answer, sufficient, thinking, reflect, weights, anneal))
}
