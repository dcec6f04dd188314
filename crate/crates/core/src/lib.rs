//! Core library for `tires`: a small, fully deterministic laboratory for
//! reinforcement-learning agents that interleave thinking, searching, and
//! answering over a synthetic multi-hop QA corpus.
//!
//! The crate is organized around seven pieces:
//!
//! * [`trace`] — the tag-delimited trajectory format and its parser/renderer.
//! * [`world`] — seeded knowledge-graph worlds, question sampling, lexical
//!   retrieval, and the programmatic sufficiency oracle.
//! * [`reward`] — per-trajectory reward signals (answer F1, sufficiency,
//!   thinking quality, reflection) and the annealed total.
//! * [`judge`] — the pluggable judge trait, its oracle implementation, and a
//!   line-delimited JSON client for external judges.
//! * [`advantage`] — group/batch normalization, difficulty weighting,
//!   consistency penalty, group filtering, and the combined pipeline.
//! * [`policy`] — a tabular softmax policy, environment rollouts, the clipped
//!   surrogate, and its analytic gradient ascent step.
//! * [`metrics`] + [`trainer`] — evaluation (EM/F1/CEM, thinking taxonomy)
//!   and the end-to-end training loop.
//!
//! All numeric kernels are generic over a [`num::Real`] scalar (`f32` or
//! `f64`); the type aliases at the crate root fix the default `f64`
//! instantiation used by the CLI and the tests.

pub mod advantage;
pub mod config;
pub mod judge;
pub mod metrics;
pub mod num;
pub mod policy;
pub mod reward;
pub mod text;
pub mod trace;
pub mod trainer;
pub mod world;

/// Default-precision reward weights.
pub type RewardWeights64 = reward::RewardWeights<f64>;
/// Default-precision reward breakdown.
pub type RewardBreakdown64 = reward::RewardBreakdown<f64>;
/// Default-precision difficulty-weight parameters.
pub type DifficultyParams64 = advantage::DifficultyParams<f64>;
/// Default-precision advantage record.
pub type AdvantageRecord64 = advantage::AdvantageRecord<f64>;
/// Default-precision rollout group.
pub type GroupBatch64 = advantage::GroupBatch<f64>;
/// Default-precision tabular policy.
pub type TabularPolicy64 = policy::TabularPolicy<f64>;
/// Default-precision evaluation report.
pub type MetricsReport64 = metrics::MetricsReport<f64>;
