//! Evaluation metrics and reasoning-depth diagnostics.
//!
//! Three answer metrics — exact match, token F1, and cover exact match
//! (gold contained in the prediction) — are aggregated alongside a
//! per-trace reasoning-depth label derived from the retrieval oracle:
//!
//! * **underthinking** — the retrieved evidence never suffices;
//! * **good thinking** — it first suffices at the final retrieval;
//! * **overthinking** — it already sufficed at an earlier retrieval.
//!
//! Crossing the label with answer correctness (by cover exact match)
//! yields a six-cell table showing where a policy spends its searches.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::num::{count, real, Real};
use crate::text::{cover_exact_match, exact_match, token_f1};
use crate::trace::{SegmentKind, Trajectory};
use crate::world::{sufficiency_point, Question};

/// Reasoning-depth label for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingCategory {
    Underthinking,
    GoodThinking,
    Overthinking,
}

impl ThinkingCategory {
    pub fn label(self) -> &'static str {
        match self {
            ThinkingCategory::Underthinking => "underthinking",
            ThinkingCategory::GoodThinking => "good thinking",
            ThinkingCategory::Overthinking => "overthinking",
        }
    }
}

/// Labels a trajectory by when its retrieved evidence first became
/// sufficient: never → underthinking, at the last retrieval → good
/// thinking, earlier → overthinking.
pub fn classify_thinking(q: &Question, t: &Trajectory) -> ThinkingCategory {
    match sufficiency_point(q, t) {
        None => ThinkingCategory::Underthinking,
        Some(p) if p == t.retrieval_count() => ThinkingCategory::GoodThinking,
        Some(_) => ThinkingCategory::Overthinking,
    }
}

/// Category × correctness counts; correctness is cover exact match.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkingCategoryCounts {
    pub over_correct: usize,
    pub over_incorrect: usize,
    pub good_correct: usize,
    pub good_incorrect: usize,
    pub under_correct: usize,
    pub under_incorrect: usize,
}

impl ThinkingCategoryCounts {
    pub fn total(&self) -> usize {
        self.over_correct
            + self.over_incorrect
            + self.good_correct
            + self.good_incorrect
            + self.under_correct
            + self.under_incorrect
    }

    pub fn cell(&self, category: ThinkingCategory, correct: bool) -> usize {
        match (category, correct) {
            (ThinkingCategory::Overthinking, true) => self.over_correct,
            (ThinkingCategory::Overthinking, false) => self.over_incorrect,
            (ThinkingCategory::GoodThinking, true) => self.good_correct,
            (ThinkingCategory::GoodThinking, false) => self.good_incorrect,
            (ThinkingCategory::Underthinking, true) => self.under_correct,
            (ThinkingCategory::Underthinking, false) => self.under_incorrect,
        }
    }

    fn bump(&mut self, category: ThinkingCategory, correct: bool) {
        let cell = match (category, correct) {
            (ThinkingCategory::Overthinking, true) => &mut self.over_correct,
            (ThinkingCategory::Overthinking, false) => &mut self.over_incorrect,
            (ThinkingCategory::GoodThinking, true) => &mut self.good_correct,
            (ThinkingCategory::GoodThinking, false) => &mut self.good_incorrect,
            (ThinkingCategory::Underthinking, true) => &mut self.under_correct,
            (ThinkingCategory::Underthinking, false) => &mut self.under_incorrect,
        };
        *cell += 1;
    }
}

impl fmt::Display for ThinkingCategoryCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<15}{:>9}{:>11}", "category", "correct", "incorrect")?;
        writeln!(f, "{:<15}{:>9}{:>11}", "overthinking", self.over_correct, self.over_incorrect)?;
        writeln!(f, "{:<15}{:>9}{:>11}", "good thinking", self.good_correct, self.good_incorrect)?;
        write!(f, "{:<15}{:>9}{:>11}", "underthinking", self.under_correct, self.under_incorrect)
    }
}

/// Per-trajectory metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceScore<S> {
    pub question_id: String,
    pub em: u8,
    pub f1: S,
    pub cem: u8,
    /// Number of retrievals (search steps).
    pub retrievals: usize,
    /// Total characters across think segments.
    pub think_chars: usize,
    pub category: ThinkingCategory,
}

/// Aggregate metrics over a set of scored trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<S> {
    /// Scored trajectories.
    pub n: usize,
    /// Trajectories skipped for lacking a final answer.
    pub skipped: usize,
    pub em: S,
    pub f1: S,
    pub cem: S,
    pub avg_retrievals: S,
    pub avg_think_chars: S,
    pub rows: Vec<TraceScore<S>>,
}

/// Scores every (question, trajectory) pair and tabulates reasoning-depth
/// categories against correctness. Pairs whose trajectory has no answer
/// are skipped (counted in `skipped`) rather than failing the batch.
pub fn evaluate<S: Real>(
    items: &[(Question, Trajectory)],
) -> (MetricsReport<S>, ThinkingCategoryCounts) {
    let mut rows = Vec::with_capacity(items.len());
    let mut counts = ThinkingCategoryCounts::default();
    let mut skipped = 0usize;
    for (q, t) in items {
        let answer = match t.final_answer() {
            Ok(a) => a,
            Err(_) => {
                log::warn!("skipping answerless trajectory {}", t.question_id);
                skipped += 1;
                continue;
            }
        };
        let em = exact_match(answer, &q.gold_answer);
        let cem = cover_exact_match(answer, &q.gold_answer);
        let category = classify_thinking(q, t);
        counts.bump(category, cem == 1);
        rows.push(TraceScore {
            question_id: q.question_id.clone(),
            em,
            f1: token_f1(answer, &q.gold_answer),
            cem,
            retrievals: t.retrieval_count(),
            think_chars: t
                .segments
                .iter()
                .filter(|s| s.kind == SegmentKind::Think)
                .map(|s| s.text.chars().count())
                .sum(),
            category,
        });
    }
    let n = rows.len();
    let report = if n == 0 {
        MetricsReport {
            n,
            skipped,
            em: S::zero(),
            f1: S::zero(),
            cem: S::zero(),
            avg_retrievals: S::zero(),
            avg_think_chars: S::zero(),
            rows,
        }
    } else {
        let denom = count::<S>(n);
        let sum_u8 = |f: fn(&TraceScore<S>) -> u8, rows: &[TraceScore<S>]| {
            rows.iter().map(|r| real::<S>(f(r) as f64)).fold(S::zero(), |a, b| a + b)
        };
        MetricsReport {
            n,
            skipped,
            em: sum_u8(|r| r.em, &rows) / denom,
            f1: rows.iter().map(|r| r.f1).fold(S::zero(), |a, b| a + b) / denom,
            cem: sum_u8(|r| r.cem, &rows) / denom,
            avg_retrievals: count::<S>(rows.iter().map(|r| r.retrievals).sum::<usize>()) / denom,
            avg_think_chars: count::<S>(rows.iter().map(|r| r.think_chars).sum::<usize>())
                / denom,
            rows,
        }
    };
    (report, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Segment;
    use crate::world::{fact_sentence, generate_world, sample_question, WorldSpec};

    fn fixture() -> (WorldSpec, Question) {
        let world = generate_world(11, 40, 5, 2).unwrap();
        let q = sample_question(&world, 2, 7).unwrap();
        (world, q)
    }

    fn trace(q: &Question, searches: &[&str], answer: Option<&str>) -> Trajectory {
        let mut segments = vec![Segment::new(SegmentKind::Think, "planning the lookups")];
        for (i, info) in searches.iter().enumerate() {
            segments.push(Segment::new(SegmentKind::Search, format!("query {i}")));
            segments.push(Segment::new(SegmentKind::Information, *info));
        }
        if let Some(a) = answer {
            segments.push(Segment::new(SegmentKind::Answer, a));
        }
        Trajectory::new(q.question_id.clone(), segments)
    }

    #[test]
    fn classification_tracks_the_sufficiency_point() {
        let (_, q) = fixture();
        let f1 = fact_sentence(&q.hops[0]);
        let f2 = fact_sentence(&q.hops[1]);

        let good = trace(&q, &[&f1, &f2], Some(&q.gold_answer));
        assert_eq!(classify_thinking(&q, &good), ThinkingCategory::GoodThinking);

        let over = trace(&q, &[&f1, &f2, "nothing new here"], Some(&q.gold_answer));
        assert_eq!(classify_thinking(&q, &over), ThinkingCategory::Overthinking);

        let under = trace(&q, &[], Some(&q.gold_answer));
        assert_eq!(classify_thinking(&q, &under), ThinkingCategory::Underthinking);

        let never = trace(&q, &["irrelevant", "also irrelevant"], Some("whatever"));
        assert_eq!(classify_thinking(&q, &never), ThinkingCategory::Underthinking);
    }

    #[test]
    fn empty_input_yields_a_zero_report() {
        let (report, counts) = evaluate::<f64>(&[]);
        assert_eq!(report.n, 0);
        assert_eq!(report.skipped, 0);
        assert_eq!(report.em, 0.0);
        assert_eq!(counts.total(), 0);
    }

    #[test]
    fn six_cell_fixture_fills_every_cell_once() {
        let (_, q) = fixture();
        let f1s = fact_sentence(&q.hops[0]);
        let f2s = fact_sentence(&q.hops[1]);
        let gold = q.gold_answer.clone();
        let wrong = "certainly not it";

        let items = vec![
            // good thinking: sufficiency arrives exactly at the last search
            (q.clone(), trace(&q, &[&f1s, &f2s], Some(&gold))),
            (q.clone(), trace(&q, &[&f1s, &f2s], Some(wrong))),
            // overthinking: one redundant search after coverage
            (q.clone(), trace(&q, &[&f1s, &f2s, "redundant"], Some(&gold))),
            (q.clone(), trace(&q, &[&f1s, &f2s, "redundant"], Some(wrong))),
            // underthinking: answering without sufficient evidence
            (q.clone(), trace(&q, &[], Some(&gold))),
            (q.clone(), trace(&q, &[], Some(wrong))),
        ];
        let (report, counts) = evaluate::<f64>(&items);
        assert_eq!(report.n, 6);
        assert_eq!(counts.over_correct, 1);
        assert_eq!(counts.over_incorrect, 1);
        assert_eq!(counts.good_correct, 1);
        assert_eq!(counts.good_incorrect, 1);
        assert_eq!(counts.under_correct, 1);
        assert_eq!(counts.under_incorrect, 1);
        assert_eq!(counts.total(), report.n);
        assert_eq!(report.em, 0.5);
        assert_eq!(report.cem, 0.5);
        // Three rows score f1 = 1, the wrong answers share no tokens.
        assert!((report.f1 - 0.5).abs() < 1e-12);
        assert!((report.avg_retrievals - (2.0 + 2.0 + 3.0 + 3.0) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn answerless_trajectories_are_skipped_not_fatal() {
        let (_, q) = fixture();
        let f1s = fact_sentence(&q.hops[0]);
        let f2s = fact_sentence(&q.hops[1]);
        let items = vec![
            (q.clone(), trace(&q, &[&f1s, &f2s], Some(&q.gold_answer))),
            (q.clone(), trace(&q, &[&f1s], None)),
        ];
        let (report, counts) = evaluate::<f64>(&items);
        assert_eq!(report.n, 1);
        assert_eq!(report.skipped, 1);
        assert_eq!(report.em, 1.0);
        assert_eq!(counts.good_correct, 1);
    }

    #[test]
    fn evaluation_is_order_invariant() {
        let (_, q) = fixture();
        let f1s = fact_sentence(&q.hops[0]);
        let f2s = fact_sentence(&q.hops[1]);
        let mut items = vec![
            (q.clone(), trace(&q, &[&f1s, &f2s], Some(&q.gold_answer))),
            (q.clone(), trace(&q, &[&f1s], Some("wrong"))),
            (q.clone(), trace(&q, &[&f1s, &f2s, "extra"], Some(&q.gold_answer))),
        ];
        let (a, ca) = evaluate::<f64>(&items);
        items.reverse();
        let (b, cb) = evaluate::<f64>(&items);
        assert_eq!(a.em, b.em);
        assert_eq!(a.f1, b.f1);
        assert_eq!(a.cem, b.cem);
        assert_eq!(ca, cb);
    }

    #[test]
    fn exact_match_implies_containment_and_full_f1_on_rows() {
        let (_, q) = fixture();
        let f1s = fact_sentence(&q.hops[0]);
        let items = vec![
            (q.clone(), trace(&q, &[&f1s], Some(&q.gold_answer))),
            (q.clone(), trace(&q, &[], Some(&format!("maybe {}", q.gold_answer)))),
            (q.clone(), trace(&q, &[], Some("unrelated"))),
        ];
        let (report, _) = evaluate::<f64>(&items);
        for row in &report.rows {
            assert!(row.em <= row.cem);
            if row.em == 1 {
                assert_eq!(row.f1, 1.0);
            }
        }
    }

    #[test]
    fn category_table_renders_in_row_layout() {
        let counts = ThinkingCategoryCounts {
            over_correct: 3,
            over_incorrect: 1,
            good_correct: 10,
            good_incorrect: 2,
            under_correct: 0,
            under_incorrect: 9,
        };
        let shown = counts.to_string();
        let lines: Vec<&str> = shown.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("overthinking"));
        assert!(lines[3].starts_with("underthinking"));
        assert!(lines[3].contains('9'));
        assert_eq!(counts.cell(ThinkingCategory::GoodThinking, true), 10);
    }
}
