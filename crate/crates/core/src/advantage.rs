//! From grouped rewards to per-rollout advantages.
//!
//! For each question, `G` rollouts form a group. The pipeline:
//!
//! 1. z-score the total rewards — within the group, or across the whole
//!    batch when the optimizer runs in batch-baseline mode;
//! 2. z-score each reward component within the group and derive a
//!    consistency penalty for rollouts whose sufficiency, thinking, and
//!    answer advantages disagree in sign;
//! 3. scale by a difficulty weight driven by the group's mean sufficiency
//!    (hard questions get up-weighted, saturated ones damped);
//! 4. flag groups with no learning signal so the trainer can skip them.
//!
//! The final advantage is `(raw - penalty) · weight`.

use serde::{Deserialize, Serialize};

use crate::num::{count, real, Real};
use crate::reward::RewardBreakdown;

/// Z-scores a group of rewards with the population standard deviation.
///
/// A group of identical values (including a singleton) carries no signal
/// and maps to all zeros — deliberately without an epsilon floor, so
/// near-constant groups are still normalized honestly.
pub fn normalize_group<S: Real>(values: &[S]) -> Vec<S> {
    if values.is_empty() || values.iter().all(|v| *v == values[0]) {
        return vec![S::zero(); values.len()];
    }
    let n = count::<S>(values.len());
    let mean = values.iter().fold(S::zero(), |a, &v| a + v) / n;
    let var = values.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    let std = var.sqrt();
    values.iter().map(|&v| (v - mean) / std).collect()
}

/// Z-scores all rewards across the batch (flattened), preserving the group
/// shape. With a single group this agrees exactly with [`normalize_group`].
pub fn normalize_batch<S: Real>(groups: &[Vec<S>]) -> Vec<Vec<S>> {
    let flat: Vec<S> = groups.iter().flatten().copied().collect();
    let normalized = normalize_group(&flat);
    let mut out = Vec::with_capacity(groups.len());
    let mut at = 0;
    for g in groups {
        out.push(normalized[at..at + g.len()].to_vec());
        at += g.len();
    }
    out
}

/// Parameters of the sufficiency-driven difficulty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyParams<S> {
    /// Weight approached by fully saturated groups (mean sufficiency 1).
    pub min_weight: S,
    /// Weight approached by hopeless groups (mean sufficiency 0).
    pub max_weight: S,
    /// Mean sufficiency at which the weight sits halfway.
    pub midpoint: S,
    /// Slope of the transition.
    pub steepness: S,
}

impl<S: Real> Default for DifficultyParams<S> {
    fn default() -> Self {
        DifficultyParams {
            min_weight: real(0.4),
            max_weight: real(1.5),
            midpoint: real(0.75),
            steepness: real(10.0),
        }
    }
}

impl<S: Real> DifficultyParams<S> {
    /// Parameters that make the weight constant 1 (difficulty scaling off).
    pub fn flat() -> Self {
        DifficultyParams {
            min_weight: S::one(),
            max_weight: S::one(),
            midpoint: real(0.75),
            steepness: real(10.0),
        }
    }
}

/// Difficulty weight for a group with mean sufficiency `suff_avg`:
/// `min + (max - min) / (1 + exp(k·(suff_avg - midpoint)))`, a decreasing
/// sigmoid from `max_weight` down to `min_weight`.
pub fn difficulty_weight<S: Real>(suff_avg: S, p: &DifficultyParams<S>) -> S {
    p.min_weight
        + (p.max_weight - p.min_weight)
            / (S::one() + (p.steepness * (suff_avg - p.midpoint)).exp())
}

/// Which product the consistency penalty uses when it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyFormula {
    /// `-λ · thinking² · answer` — the published form, squaring the
    /// thinking advantage. The default.
    #[serde(rename = "tta")]
    ThinkingSquaredAnswer,
    /// `-λ · sufficiency · thinking · answer` — the variant using each
    /// component once.
    #[serde(rename = "sta")]
    SuffThinkingAnswer,
}

impl Default for PenaltyFormula {
    fn default() -> Self {
        PenaltyFormula::ThinkingSquaredAnswer
    }
}

/// Consistency penalty under the default formula; see
/// [`consistency_penalty_with`].
pub fn consistency_penalty<S: Real>(suff_adv: S, think_adv: S, answer_adv: S, lambda: S) -> S {
    consistency_penalty_with(
        PenaltyFormula::ThinkingSquaredAnswer,
        suff_adv,
        think_adv,
        answer_adv,
        lambda,
    )
}

/// Penalty for sign-inconsistent component advantages.
///
/// Fires only when `suff_adv · think_adv · answer_adv < 0`; otherwise 0.
pub fn consistency_penalty_with<S: Real>(
    formula: PenaltyFormula,
    suff_adv: S,
    think_adv: S,
    answer_adv: S,
    lambda: S,
) -> S {
    if suff_adv * think_adv * answer_adv < S::zero() {
        match formula {
            PenaltyFormula::ThinkingSquaredAnswer => -(lambda * think_adv * think_adv * answer_adv),
            PenaltyFormula::SuffThinkingAnswer => {
                -(lambda * suff_adv * think_adv * answer_adv)
            }
        }
    } else {
        S::zero()
    }
}

/// Group-filtering rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    /// Drop a group only when it is saturated: every answer reward at or
    /// above `high`, or every one at or below `low`. The default.
    #[serde(rename = "prose")]
    DropSaturated,
    /// Keep a group only when every answer reward lies strictly inside
    /// `(low, high)`. A much stricter variant.
    #[serde(rename = "alg1")]
    StrictInterior,
}

impl Default for FilterMode {
    fn default() -> Self {
        FilterMode::DropSaturated
    }
}

/// Returns whether a group should be kept for the update.
pub fn filter_group<S: Real>(answer_rewards: &[S], low: S, high: S, mode: FilterMode) -> bool {
    if answer_rewards.is_empty() {
        return false;
    }
    match mode {
        FilterMode::DropSaturated => {
            let all_high = answer_rewards.iter().all(|&r| r >= high);
            let all_low = answer_rewards.iter().all(|&r| r <= low);
            !(all_high || all_low)
        }
        FilterMode::StrictInterior => answer_rewards.iter().all(|&r| r > low && r < high),
    }
}

/// The `G` scored rollouts of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch<S> {
    pub question_id: String,
    pub rewards: Vec<RewardBreakdown<S>>,
}

impl<S: Real> GroupBatch<S> {
    pub fn new(question_id: impl Into<String>, rewards: Vec<RewardBreakdown<S>>) -> Self {
        GroupBatch { question_id: question_id.into(), rewards }
    }

    pub fn totals(&self) -> Vec<S> {
        self.rewards.iter().map(|r| r.total).collect()
    }

    pub fn answer_rewards(&self) -> Vec<S> {
        self.rewards.iter().map(|r| r.answer).collect()
    }

    /// Mean sufficiency across the group — the difficulty signal.
    pub fn sufficient_avg(&self) -> S {
        if self.rewards.is_empty() {
            return S::zero();
        }
        self.rewards.iter().fold(S::zero(), |a, r| a + r.sufficient)
            / count(self.rewards.len())
    }
}

/// Where the raw advantage is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormScope {
    /// Within each group (group-relative baselines).
    Group,
    /// Across the whole batch (global-batch baseline).
    Batch,
}

/// Everything the pipeline derived for one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord<S> {
    /// z-scored total reward.
    pub raw: S,
    /// Group-z-scored sufficiency reward.
    pub suff_adv: S,
    /// Group-z-scored thinking reward.
    pub think_adv: S,
    /// Group-z-scored answer reward.
    pub answer_adv: S,
    pub penalty: S,
    /// Difficulty weight shared by the whole group.
    pub weight: S,
    /// `(raw - penalty) · weight`.
    pub final_adv: S,
    /// Set by the trainer when the group was dropped from the update.
    pub filtered: bool,
}

/// Runs the full pipeline for one group in isolation (group-scope raw
/// normalization). Records come back in rollout order with `filtered =
/// false`; filtering is the trainer's decision.
pub fn finalize<S: Real>(
    group: &GroupBatch<S>,
    difficulty: &DifficultyParams<S>,
    lambda: S,
    formula: PenaltyFormula,
) -> Vec<AdvantageRecord<S>> {
    finalize_batch(std::slice::from_ref(group), difficulty, lambda, formula, NormScope::Group)
        .pop()
        .expect("one group in, one record list out")
}

/// Runs the pipeline for a batch of groups.
///
/// The raw advantage is normalized per group or across the batch according
/// to `scope`; component advantages and the difficulty weight are always
/// group-local. With a single group the two scopes coincide exactly.
pub fn finalize_batch<S: Real>(
    groups: &[GroupBatch<S>],
    difficulty: &DifficultyParams<S>,
    lambda: S,
    formula: PenaltyFormula,
    scope: NormScope,
) -> Vec<Vec<AdvantageRecord<S>>> {
    let totals: Vec<Vec<S>> = groups.iter().map(GroupBatch::totals).collect();
    let raw: Vec<Vec<S>> = match scope {
        NormScope::Group => totals.iter().map(|g| normalize_group(g)).collect(),
        NormScope::Batch => normalize_batch(&totals),
    };

    groups
        .iter()
        .zip(raw)
        .map(|(group, raw_group)| {
            let suff: Vec<S> =
                normalize_group(&group.rewards.iter().map(|r| r.sufficient).collect::<Vec<_>>());
            let think: Vec<S> =
                normalize_group(&group.rewards.iter().map(|r| r.thinking).collect::<Vec<_>>());
            let answer: Vec<S> = normalize_group(&group.answer_rewards());
            let weight = difficulty_weight(group.sufficient_avg(), difficulty);
            raw_group
                .into_iter()
                .enumerate()
                .map(|(i, raw)| {
                    let penalty =
                        consistency_penalty_with(formula, suff[i], think[i], answer[i], lambda);
                    AdvantageRecord {
                        raw,
                        suff_adv: suff[i],
                        think_adv: think[i],
                        answer_adv: answer[i],
                        penalty,
                        weight,
                        final_adv: (raw - penalty) * weight,
                        filtered: false,
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RewardWeights;

    fn breakdown(answer: f64, sufficient: bool, thinking: f64, reflect: i8) -> RewardBreakdown<f64> {
        RewardBreakdown::new(answer, sufficient, thinking, reflect, &RewardWeights::default(), 1.0)
    }

    #[test]
    fn normalize_group_matches_hand_computation() {
        // Values -1, 0, 1: mean 0, population std sqrt(2/3).
        let z = normalize_group(&[-1.0, 0.0, 1.0]);
        let s = (2.0f64 / 3.0).sqrt();
        assert!((z[0] + 1.0 / s).abs() < 1e-15);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - 1.0 / s).abs() < 1e-15);
    }

    #[test]
    fn constant_groups_normalize_to_exact_zeros() {
        assert_eq!(normalize_group(&[0.7f64; 5]), vec![0.0; 5]);
        // 0.1 sums to a non-representable mean; elementwise equality must
        // still catch the constant group.
        assert_eq!(normalize_group(&[0.1f64, 0.1, 0.1]), vec![0.0; 3]);
        assert_eq!(normalize_group(&[2.5f64]), vec![0.0]);
        assert_eq!(normalize_group::<f64>(&[]), Vec::<f64>::new());
    }

    #[test]
    fn batch_scope_on_single_group_is_group_scope_bitwise() {
        let g = vec![0.12f64, 0.9, 0.4, 0.77, 0.31];
        assert_eq!(normalize_batch(&[g.clone()])[0], normalize_group(&g));
    }

    #[test]
    fn batch_scope_flattens_across_groups() {
        let a = vec![0.0f64, 1.0];
        let b = vec![2.0f64, 3.0];
        let out = normalize_batch(&[a.clone(), b.clone()]);
        let flat = normalize_group(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(out[0], flat[..2].to_vec());
        assert_eq!(out[1], flat[2..].to_vec());
    }

    #[test]
    fn difficulty_weight_golden_values() {
        let p = DifficultyParams::<f64>::default();
        assert!((difficulty_weight(0.75, &p) - 0.95).abs() < 1e-12);
        assert!((difficulty_weight(1.0, &p) - 0.48344).abs() < 1e-4);
        assert!((difficulty_weight(0.0, &p) - 1.49944).abs() < 1e-4);
        // Monotonically decreasing in sufficiency.
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let w = difficulty_weight(i as f64 / 100.0, &p);
            assert!(w < prev);
            assert!(w > p.min_weight && w < p.max_weight);
            prev = w;
        }
    }

    #[test]
    fn penalty_fires_only_on_sign_disagreement() {
        // Product negative: one negative component.
        let p: f64 = consistency_penalty(1.0, 1.0, -2.0, 0.1);
        assert!((p - 0.2).abs() < 1e-15); // -(0.1 · 1 · 1 · -2) = +0.2
        // Negative thinking, positive answer: product negative, fires;
        // thinking enters squared so its sign vanishes.
        let p: f64 = consistency_penalty(1.0, -1.5, 2.0, 0.1);
        assert!((p + 0.45).abs() < 1e-15); // -(0.1 · 2.25 · 2) = -0.45
        // Product positive or zero: no penalty.
        assert_eq!(consistency_penalty(1.0, 1.0, 2.0, 0.1), 0.0);
        assert_eq!(consistency_penalty(-1.0, -1.0, 2.0, 0.1), 0.0);
        assert_eq!(consistency_penalty(0.0, 1.0, -2.0, 0.1), 0.0);
    }

    #[test]
    fn sta_variant_uses_each_component_once() {
        let p: f64 =
            consistency_penalty_with(PenaltyFormula::SuffThinkingAnswer, 0.5, -1.5, 2.0, 0.1);
        // -(0.1 · 0.5 · -1.5 · 2.0) = +0.15
        assert!((p - 0.15).abs() < 1e-15);
        assert_eq!(
            consistency_penalty_with(PenaltyFormula::SuffThinkingAnswer, 0.5, 1.5, 2.0, 0.1),
            0.0
        );
    }

    #[test]
    fn zero_lambda_never_penalizes_the_final_advantage() {
        let g = GroupBatch::new(
            "q",
            vec![breakdown(0.0, false, 0.9, 0), breakdown(1.0, true, 0.1, 0)],
        );
        let recs = finalize(&g, &DifficultyParams::flat(), 0.0, PenaltyFormula::default());
        for r in &recs {
            assert_eq!(r.final_adv, r.raw);
        }
    }

    #[test]
    fn filter_prose_drops_only_saturated_groups() {
        let m = FilterMode::DropSaturated;
        assert!(!filter_group(&[1.0f64; 5], 0.1, 0.9, m));
        assert!(!filter_group(&[0.0f64, 0.05, 0.1], 0.1, 0.9, m));
        assert!(filter_group(&[0.0, 1.0, 0.5, 0.2, 0.8], 0.1, 0.9, m));
        assert!(filter_group(&[0.5f64; 3], 0.1, 0.9, m));
    }

    #[test]
    fn filter_strict_interior_keeps_only_mid_range_groups() {
        let m = FilterMode::StrictInterior;
        assert!(!filter_group(&[1.0f64; 5], 0.1, 0.9, m));
        assert!(!filter_group(&[0.0, 1.0, 0.5, 0.2, 0.8], 0.1, 0.9, m));
        assert!(filter_group(&[0.5f64; 3], 0.1, 0.9, m));
        assert!(!filter_group(&[0.1f64, 0.5], 0.1, 0.9, m));
    }

    #[test]
    fn finalize_combines_raw_penalty_and_weight() {
        let g = GroupBatch::new(
            "q",
            vec![
                breakdown(0.9, true, 0.8, 0),
                breakdown(0.2, false, 0.9, 0),
                breakdown(0.5, true, 0.2, 0),
            ],
        );
        let d = DifficultyParams::default();
        let recs = finalize(&g, &d, 0.1, PenaltyFormula::default());
        let raw = normalize_group(&g.totals());
        let w = difficulty_weight(2.0 / 3.0, &d);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.raw, raw[i]);
            assert_eq!(r.weight, w);
            assert_eq!(r.final_adv, (r.raw - r.penalty) * w);
            assert!(!r.filtered);
        }
    }

    #[test]
    fn finalize_batch_scope_changes_raw_only() {
        let g1 = GroupBatch::new("a", vec![breakdown(0.9, true, 0.8, 0), breakdown(0.1, false, 0.2, 0)]);
        let g2 = GroupBatch::new("b", vec![breakdown(0.6, true, 0.5, 0), breakdown(0.3, true, 0.4, 0)]);
        let d = DifficultyParams::default();
        let group_scope =
            finalize_batch(&[g1.clone(), g2.clone()], &d, 0.1, PenaltyFormula::default(), NormScope::Group);
        let batch_scope =
            finalize_batch(&[g1, g2], &d, 0.1, PenaltyFormula::default(), NormScope::Batch);
        for (gs, bs) in group_scope.iter().zip(&batch_scope) {
            for (a, b) in gs.iter().zip(bs) {
                assert_eq!(a.suff_adv, b.suff_adv);
                assert_eq!(a.think_adv, b.think_adv);
                assert_eq!(a.answer_adv, b.answer_adv);
                assert_eq!(a.weight, b.weight);
            }
        }
        // But the raw advantages differ (different baselines).
        assert_ne!(group_scope[0][0].raw, batch_scope[0][0].raw);
    }
}
