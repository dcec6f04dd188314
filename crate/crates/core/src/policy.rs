//! Tabular softmax policy and its environment loop.
//!
//! The agent state tracks which hops have been resolved, how many decisions
//! were taken, and where the episode stands in the
//! search → answer → reflect protocol. Preferences live in a sorted table
//! keyed by state; action probabilities are a temperature softmax over the
//! legal actions at each visit, so log-probabilities and policy gradients
//! are exact, not estimated.
//!
//! Episode protocol:
//!
//! * before the first answer: search any hop, search noise, or answer;
//! * directly after the first answer: reflect (re-opening search) or stop;
//! * after reflecting: search or answer again — a second answer ends the
//!   episode, as does the step cap or an exhausted retrieval budget.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{count, Real};
use crate::trace::{Segment, SegmentKind, Trajectory};
use crate::world::{
    fact_sentence, hop_query, noise_query, retrieve, Question, WorldSpec, CHAIN_HOPS,
};

/// Upper bound on hops per question, fixed by the world's chain length.
pub const MAX_HOPS: usize = CHAIN_HOPS;

/// Total size of the action universe (all hop searches plus the five
/// hop-independent actions).
pub const ACTION_COUNT: usize = MAX_HOPS + 5;

/// One decision the agent can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    /// Search the canonical query for hop `j` (1-based).
    SearchHop(u8),
    /// Search a query unrelated to the question.
    SearchNoise,
    /// Answer with the object of the deepest fully-resolved hop prefix.
    AnswerBest,
    /// Answer with a uniformly random entity.
    AnswerRandom,
    /// Re-open search after an answer (at most once per episode).
    Reflect,
    /// End the episode after an answer.
    Stop,
}

impl Action {
    /// Dense index into a preference row.
    pub fn index(self) -> usize {
        match self {
            Action::SearchHop(j) => {
                debug_assert!((1..=MAX_HOPS as u8).contains(&j));
                (j - 1) as usize
            }
            Action::SearchNoise => MAX_HOPS,
            Action::AnswerBest => MAX_HOPS + 1,
            Action::AnswerRandom => MAX_HOPS + 2,
            Action::Reflect => MAX_HOPS + 3,
            Action::Stop => MAX_HOPS + 4,
        }
    }
}

/// The policy's view of the episode.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct AgentState {
    /// Bitmask of resolved hops (bit `j-1` = hop `j`'s fact retrieved).
    pub resolved_hops: u16,
    /// Decisions taken so far.
    pub steps_taken: u16,
    /// Whether an answer has been produced.
    pub answered_once: bool,
    /// Whether the episode is in post-reflection search.
    pub reflecting: bool,
}

impl AgentState {
    pub fn initial() -> Self {
        AgentState { resolved_hops: 0, steps_taken: 0, answered_once: false, reflecting: false }
    }

    /// Length of the resolved prefix: the largest `m` with hops `1..=m` all
    /// resolved.
    pub fn resolved_prefix(&self) -> usize {
        let mut m = 0;
        while self.resolved_hops & (1 << m) != 0 {
            m += 1;
        }
        m
    }
}

/// Legal actions at `state` for a question with `hops` hops;
/// `can_search` is false once the retrieval budget is exhausted.
pub fn legal_actions(state: &AgentState, hops: usize, can_search: bool) -> Vec<Action> {
    debug_assert!(hops >= 1 && hops <= MAX_HOPS);
    if state.answered_once && !state.reflecting {
        return vec![Action::Reflect, Action::Stop];
    }
    let mut actions = Vec::with_capacity(hops + 3);
    if can_search {
        for j in 1..=hops {
            actions.push(Action::SearchHop(j as u8));
        }
        actions.push(Action::SearchNoise);
    }
    actions.push(Action::AnswerBest);
    actions.push(Action::AnswerRandom);
    actions
}

/// Preference table plus softmax temperature.
///
/// Unvisited states hold implicit all-zero preferences (uniform over the
/// legal actions); the table materializes entries only when an update
/// touches them, which keeps checkpoints small and no-op updates exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    bound(serialize = "S: Serialize + Copy", deserialize = "S: serde::de::DeserializeOwned + Copy"),
    into = "PolicyDump<S>",
    try_from = "PolicyDump<S>"
)]
pub struct TabularPolicy<S: Copy> {
    temperature: S,
    prefs: BTreeMap<AgentState, [S; ACTION_COUNT]>,
}

/// Serialized form: sorted `(state, preferences)` entries.
#[derive(Serialize, Deserialize)]
pub struct PolicyDump<S> {
    pub temperature: S,
    pub entries: Vec<PolicyEntry<S>>,
}

#[derive(Serialize, Deserialize)]
pub struct PolicyEntry<S> {
    pub state: AgentState,
    pub prefs: Vec<S>,
}

impl<S: Copy> From<TabularPolicy<S>> for PolicyDump<S> {
    fn from(p: TabularPolicy<S>) -> Self {
        PolicyDump {
            temperature: p.temperature,
            entries: p
                .prefs
                .into_iter()
                .map(|(state, prefs)| PolicyEntry { state, prefs: prefs.to_vec() })
                .collect(),
        }
    }
}

impl<S: Copy> TryFrom<PolicyDump<S>> for TabularPolicy<S> {
    type Error = String;

    fn try_from(d: PolicyDump<S>) -> Result<Self, String> {
        let mut prefs = BTreeMap::new();
        for e in d.entries {
            let row: [S; ACTION_COUNT] = e
                .prefs
                .try_into()
                .map_err(|v: Vec<S>| format!("preference row has {} entries, expected {ACTION_COUNT}", v.len()))?;
            prefs.insert(e.state, row);
        }
        Ok(TabularPolicy { temperature: d.temperature, prefs })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("cannot differentiate an argmax policy: temperature must be positive")]
    ZeroTemperature,
    #[error("non-finite gradient at pass {pass}")]
    NonFiniteGradient { pass: usize },
}

impl<S: Real> TabularPolicy<S> {
    pub fn new(temperature: S) -> Self {
        TabularPolicy { temperature, prefs: BTreeMap::new() }
    }

    pub fn temperature(&self) -> S {
        self.temperature
    }

    /// Number of materialized state rows.
    pub fn table_len(&self) -> usize {
        self.prefs.len()
    }

    pub fn pref(&self, state: &AgentState, action: Action) -> S {
        self.prefs.get(state).map_or(S::zero(), |row| row[action.index()])
    }

    pub fn set_pref(&mut self, state: AgentState, action: Action, value: S) {
        self.prefs.entry(state).or_insert([S::zero(); ACTION_COUNT])[action.index()] = value;
    }

    fn nudge(&mut self, state: AgentState, action_index: usize, delta: S) {
        self.prefs.entry(state).or_insert([S::zero(); ACTION_COUNT])[action_index] =
            self.prefs.get(&state).map_or(S::zero(), |r| r[action_index]) + delta;
    }

    /// Log-probabilities over `legal`, aligned with its order.
    ///
    /// Temperature 0 degenerates to argmax: log-prob 0 for the first
    /// maximal-preference action, `-inf` elsewhere.
    pub fn logprobs(&self, state: &AgentState, legal: &[Action]) -> Vec<S> {
        assert!(!legal.is_empty(), "no legal actions at {state:?}");
        let prefs: Vec<S> = legal.iter().map(|&a| self.pref(state, a)).collect();
        if self.temperature == S::zero() {
            let best = argmax(&prefs);
            return (0..legal.len())
                .map(|i| if i == best { S::zero() } else { S::neg_infinity() })
                .collect();
        }
        let z: Vec<S> = prefs.iter().map(|&p| p / self.temperature).collect();
        let max = z.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max
            + z.iter().fold(S::zero(), |acc, &v| acc + (v - max).exp()).ln();
        z.iter().map(|&v| v - lse).collect()
    }

    /// Samples a legal action; returns it with its log-probability.
    pub fn sample(
        &self,
        state: &AgentState,
        legal: &[Action],
        rng: &mut ChaCha8Rng,
    ) -> (Action, S) {
        let logps = self.logprobs(state, legal);
        if self.temperature == S::zero() {
            let best = argmax(&legal.iter().map(|&a| self.pref(state, a)).collect::<Vec<_>>());
            return (legal[best], logps[best]);
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, lp) in logps.iter().enumerate() {
            acc += lp.exp().to_f64().expect("probability fits f64");
            if u < acc {
                return (legal[i], logps[i]);
            }
        }
        let last = legal.len() - 1;
        (legal[last], logps[last])
    }
}

fn argmax<S: Real>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One recorded decision: the state seen, the action taken, and the action
/// set it was sampled from (needed to rebuild the softmax at update time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub state: AgentState,
    pub action: Action,
    pub legal: Vec<Action>,
}

/// A generated trajectory with its policy-side bookkeeping. The
/// trajectory's `step_logprobs` mirror `logprobs` at `f64` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<S> {
    pub trajectory: Trajectory,
    pub decisions: Vec<Decision>,
    pub logprobs: Vec<S>,
}

/// Environment knobs for rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Rollouts per question (the group size).
    pub group_size: usize,
    /// Hard cap on decisions per episode.
    pub max_steps: usize,
    /// Hard cap on retrievals per episode; search becomes illegal beyond it.
    pub max_retrievals: usize,
    /// Documents returned per search.
    pub top_k: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { group_size: 5, max_steps: 10, max_retrievals: 8, top_k: 5 }
    }
}

/// Placeholder answer when nothing is resolved; deliberately not an entity
/// name so it never collides with a gold answer.
const UNRESOLVED_ANSWER: &str = "unknown";

/// Runs one episode. Deterministic in the rng state.
pub fn rollout_one<S: Real>(
    policy: &TabularPolicy<S>,
    world: &WorldSpec,
    q: &Question,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Rollout<S> {
    let hops = q.hops.len();
    let sentences: Vec<String> = q.hops.iter().map(fact_sentence).collect();
    let mut state = AgentState::initial();
    let mut segments: Vec<Segment> = Vec::new();
    let mut decisions = Vec::new();
    let mut logprobs = Vec::new();
    let mut retrievals = 0usize;
    let mut answers = 0usize;

    while (state.steps_taken as usize) < cfg.max_steps {
        let legal = legal_actions(&state, hops, retrievals < cfg.max_retrievals);
        let (action, lp) = policy.sample(&state, &legal, rng);
        decisions.push(Decision { state, action, legal });
        logprobs.push(lp);

        match action {
            Action::SearchHop(j) => {
                let hop = &q.hops[(j - 1) as usize];
                segments.push(Segment::new(
                    SegmentKind::Think,
                    format!("I need the {} of {}.", hop.relation, hop.subject),
                ));
                run_search(world, &hop_query(hop), cfg, &sentences, &mut segments, &mut state);
                retrievals += 1;
            }
            Action::SearchNoise => {
                let query = noise_query(world, q, rng);
                run_search(world, &query, cfg, &sentences, &mut segments, &mut state);
                retrievals += 1;
            }
            Action::AnswerBest => {
                let m = state.resolved_prefix().min(hops);
                let text = if m >= 1 {
                    q.hops[m - 1].object.clone()
                } else {
                    UNRESOLVED_ANSWER.to_owned()
                };
                segments.push(Segment::new(SegmentKind::Think, format!("The answer is {text}.")));
                segments.push(Segment::new(SegmentKind::Answer, text));
                answers += 1;
            }
            Action::AnswerRandom => {
                let pick = world.entities[rng.gen_range(0..world.entities.len())].clone();
                segments.push(Segment::new(SegmentKind::Answer, pick));
                answers += 1;
            }
            Action::Reflect => {
                segments.push(Segment::new(
                    SegmentKind::Think,
                    "Let me reconsider and double-check the answer.".to_owned(),
                ));
                state.reflecting = true;
            }
            Action::Stop => {}
        }

        state.steps_taken += 1;
        state.answered_once = answers >= 1;
        if action == Action::Stop || answers >= 2 {
            break;
        }
    }

    let mut trajectory = Trajectory::new(q.question_id.clone(), segments);
    trajectory.step_logprobs =
        logprobs.iter().map(|lp| lp.to_f64().expect("log-prob fits f64")).collect();
    Rollout { trajectory, decisions, logprobs }
}

/// Appends search + information segments and marks any hop whose fact
/// sentence is visible in the retrieved text.
fn run_search(
    world: &WorldSpec,
    query: &str,
    cfg: &RolloutConfig,
    sentences: &[String],
    segments: &mut Vec<Segment>,
    state: &mut AgentState,
) {
    let hits = retrieve(world, query, cfg.top_k);
    let info = hits.iter().map(|h| h.text.as_str()).collect::<Vec<_>>().join(" ");
    for (i, sentence) in sentences.iter().enumerate() {
        if info.contains(sentence) {
            state.resolved_hops |= 1 << i;
        }
    }
    segments.push(Segment::new(SegmentKind::Search, query.to_owned()));
    segments.push(Segment::new(SegmentKind::Information, info));
}

/// Runs a group of episodes, each on its own rng stream split off `rng`, so
/// the group is reproducible regardless of evaluation order.
pub fn rollout_group<S: Real>(
    policy: &TabularPolicy<S>,
    world: &WorldSpec,
    q: &Question,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Rollout<S>> {
    let seeds: Vec<u64> = (0..cfg.group_size).map(|_| rng.next_u64()).collect();
    seeds
        .into_iter()
        .map(|s| rollout_one(policy, world, q, cfg, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect()
}

/// Clipped importance-weighted surrogate for one rollout: the mean over
/// steps of `min(r·A, clip(r, 1-ε, 1+ε)·A)` with `r = exp(new - old)`.
pub fn grpo_surrogate<S: Real>(old: &[S], new: &[S], advantage: S, epsilon: S) -> S {
    assert_eq!(old.len(), new.len(), "old/new log-prob lists must align");
    if old.is_empty() {
        return S::zero();
    }
    let mut acc = S::zero();
    for (&o, &n) in old.iter().zip(new) {
        let ratio = (n - o).exp();
        let clipped = ratio.min(S::one() + epsilon).max(S::one() - epsilon);
        acc = acc + (ratio * advantage).min(clipped * advantage);
    }
    acc / count(old.len())
}

/// One rollout prepared for the optimizer: its decisions, the log-probs
/// snapshotted at rollout time, and its final advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<S> {
    pub decisions: Vec<Decision>,
    pub old_logprobs: Vec<S>,
    pub advantage: S,
}

impl<S: Real> TrainSample<S> {
    pub fn new(rollout: &Rollout<S>, advantage: S) -> Self {
        TrainSample {
            decisions: rollout.decisions.clone(),
            old_logprobs: rollout.logprobs.clone(),
            advantage,
        }
    }
}

/// Optimizer knobs for [`update_policy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig<S> {
    pub learning_rate: S,
    /// Clip half-width ε.
    pub clip: S,
    /// Gradient-ascent passes per batch (old log-probs and advantages stay
    /// frozen across passes).
    pub inner_iters: usize,
}

/// Mean clipped surrogate of a batch under the current policy.
pub fn batch_objective<S: Real>(
    policy: &TabularPolicy<S>,
    samples: &[TrainSample<S>],
    epsilon: S,
) -> S {
    if samples.is_empty() {
        return S::zero();
    }
    let mut acc = S::zero();
    for s in samples {
        let new: Vec<S> = s
            .decisions
            .iter()
            .map(|d| {
                let lps = policy.logprobs(&d.state, &d.legal);
                lps[position_of(&d.legal, d.action)]
            })
            .collect();
        acc = acc + grpo_surrogate(&s.old_logprobs, &new, s.advantage, epsilon);
    }
    acc / count(samples.len())
}

/// Exact gradient of [`batch_objective`] with respect to the preference
/// table, as a sparse map.
pub fn batch_gradient<S: Real>(
    policy: &TabularPolicy<S>,
    samples: &[TrainSample<S>],
    epsilon: S,
) -> Result<BTreeMap<(AgentState, usize), S>, PolicyError> {
    if policy.temperature() == S::zero() {
        return Err(PolicyError::ZeroTemperature);
    }
    let mut grad: BTreeMap<(AgentState, usize), S> = BTreeMap::new();
    let n_samples = count::<S>(samples.len().max(1));
    for s in samples {
        // Zero-advantage rollouts contribute nothing; skipping them keeps
        // the table untouched (bitwise) instead of materializing zeros.
        if s.advantage == S::zero() || s.decisions.is_empty() {
            continue;
        }
        let n_steps = count::<S>(s.decisions.len());
        for (d, &old) in s.decisions.iter().zip(&s.old_logprobs) {
            let lps = policy.logprobs(&d.state, &d.legal);
            let at = position_of(&d.legal, d.action);
            let ratio = (lps[at] - old).exp();
            let clipped = ratio.min(S::one() + epsilon).max(S::one() - epsilon);
            // min(r·A, clip(r)·A): when the unclipped branch is active the
            // gradient flows through r; otherwise the term is constant.
            if ratio * s.advantage <= clipped * s.advantage {
                let coef = s.advantage * ratio / (n_steps * n_samples);
                for (i, &b) in d.legal.iter().enumerate() {
                    let p = lps[i].exp();
                    let indicator = if i == at { S::one() } else { S::zero() };
                    let dlogp = (indicator - p) / policy.temperature();
                    *grad.entry((d.state, b.index())).or_insert_with(S::zero) =
                        *grad.get(&(d.state, b.index())).unwrap_or(&S::zero()) + coef * dlogp;
                }
            }
        }
    }
    Ok(grad)
}

fn position_of(legal: &[Action], action: Action) -> usize {
    legal.iter().position(|&a| a == action).expect("taken action is in its legal set")
}

/// Report from one [`update_policy`] call: the batch objective measured at
/// the start of each pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport<S> {
    pub objectives: Vec<S>,
}

/// Ascends the clipped surrogate for `inner_iters` passes with frozen old
/// log-probs and advantages, mutating the policy in place.
pub fn update_policy<S: Real>(
    policy: &mut TabularPolicy<S>,
    samples: &[TrainSample<S>],
    cfg: &UpdateConfig<S>,
) -> Result<UpdateReport<S>, PolicyError> {
    let mut objectives = Vec::with_capacity(cfg.inner_iters);
    for pass in 0..cfg.inner_iters {
        objectives.push(batch_objective(policy, samples, cfg.clip));
        let grad = batch_gradient(policy, samples, cfg.clip)?;
        if grad.values().any(|g| !g.is_finite()) {
            return Err(PolicyError::NonFiniteGradient { pass });
        }
        for ((state, action_index), g) in grad {
            policy.nudge(state, action_index, cfg.learning_rate * g);
        }
    }
    Ok(UpdateReport { objectives })
}
