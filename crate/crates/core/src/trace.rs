//! The tag-delimited trajectory format.
//!
//! A trajectory is a flat sequence of `<think>`, `<search>`,
//! `<information>`, and `<answer>` segments. Tags are case-sensitive and do
//! not nest. Structural rules:
//!
//! * every `<search>` is immediately followed by exactly one
//!   `<information>` (the retrieval result for that query);
//! * an `<information>` never appears without a `<search>` directly before
//!   it;
//! * a complete trajectory contains at least one `<answer>`, and generated
//!   trajectories contain at most two (the second comes from reflection);
//! * the last `<answer>` is the prediction.
//!
//! [`parse_trajectory`] reports violations as [`ParseDiagnostic`] values —
//! it never panics, whatever the input. [`render_trajectory`] is its
//! canonical inverse: segments are emitted as `<tag>text</tag>` joined by
//! single newlines, and `parse(render(t))` reproduces `t` exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four segment kinds, in tag spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Think,
    Search,
    Information,
    Answer,
}

impl SegmentKind {
    const ALL: [SegmentKind; 4] = [
        SegmentKind::Think,
        SegmentKind::Search,
        SegmentKind::Information,
        SegmentKind::Answer,
    ];

    /// Tag name as it appears in the serialized form.
    pub fn tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "think",
            SegmentKind::Search => "search",
            SegmentKind::Information => "information",
            SegmentKind::Answer => "answer",
        }
    }
}

/// One tagged span of a trajectory. Position in the segment list is the
/// segment's identity; the text is stored verbatim (no trimming).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
}

impl Segment {
    pub fn new(kind: SegmentKind, text: impl Into<String>) -> Self {
        Segment { kind, text: text.into() }
    }
}

/// A parsed or generated trajectory plus its bookkeeping.
///
/// `step_logprobs` holds one log-probability per policy decision for
/// generated trajectories and is empty for externally ingested text. `meta`
/// is a free-form JSON object carried through serialization untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub step_logprobs: Vec<f64>,
    #[serde(default = "empty_meta")]
    pub meta: serde_json::Value,
}

fn empty_meta() -> serde_json::Value {
    serde_json::Value::Object(serde_json::Map::new())
}

/// Diagnostic codes for structurally broken trajectory text.
///
/// `TrailingText` and `ExtraAnswers` are warnings (the trajectory still
/// parses); the rest are errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticCode {
    /// A closing tag with no matching opener, an opener with no closer, or a
    /// mismatched closer.
    UnbalancedTag,
    /// An `<information>` segment not directly preceded by a `<search>`.
    OrphanInformation,
    /// No `<answer>` segment in the trajectory.
    MissingAnswer,
    /// An opening tag inside another segment's body.
    NestedTag,
    /// Non-whitespace text between segments (warning).
    TrailingText,
    /// A `<search>` segment that is empty after trimming.
    EmptySearch,
    /// A `<search>` segment not directly followed by an `<information>`.
    UnpairedSearch,
    /// More than two `<answer>` segments (warning; external traces may
    /// overrun the reflection budget).
    ExtraAnswers,
}

/// One parser finding: what went wrong and where (byte offsets into the
/// input).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub code: DiagnosticCode,
    pub span: (usize, usize),
    pub message: String,
}

impl ParseDiagnostic {
    fn new(code: DiagnosticCode, span: (usize, usize), message: impl Into<String>) -> Self {
        ParseDiagnostic { code, span, message: message.into() }
    }
}

/// Successful parse: the trajectory plus any warning-level diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub trajectory: Trajectory,
    pub warnings: Vec<ParseDiagnostic>,
}

/// Errors from the accessor functions on well-formed trajectories.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trajectory has no answer segment")]
    NoAnswer,
    #[error("retrieval index {index} out of range: trajectory has {count} retrievals")]
    RetrievalOutOfRange { index: usize, count: usize },
}

/// Parses trajectory text, requiring structural validity and at least one
/// answer. Returns the segments in source order together with any warnings,
/// or the full list of error diagnostics. Never panics.
pub fn parse_trajectory(raw: &str) -> Result<Parsed, Vec<ParseDiagnostic>> {
    parse_with_mode(raw, true)
}

/// Like [`parse_trajectory`] but accepts answer-free partial traces
/// (truncated rollouts, prefixes): a missing answer is reported as a warning
/// instead of an error. Scoring treats such traces as incomplete.
pub fn parse_partial(raw: &str) -> Result<Parsed, Vec<ParseDiagnostic>> {
    parse_with_mode(raw, false)
}

fn parse_with_mode(raw: &str, require_answer: bool) -> Result<Parsed, Vec<ParseDiagnostic>> {
    let mut segments = Vec::new();
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut pos = 0;

    while pos < raw.len() {
        match next_tag(raw, pos) {
            Some((tag_start, kind, is_close)) => {
                flag_gap_text(raw, pos, tag_start, &mut warnings);
                if is_close {
                    // A closer with no segment open.
                    errors.push(ParseDiagnostic::new(
                        DiagnosticCode::UnbalancedTag,
                        (tag_start, tag_start + close_tag(kind).len()),
                        format!("closing </{}> without an opening tag", kind.tag()),
                    ));
                    pos = tag_start + close_tag(kind).len();
                    continue;
                }
                let body_start = tag_start + open_tag(kind).len();
                match scan_body(raw, body_start, kind) {
                    BodyScan::Closed { text_end, after } => {
                        segments.push(Segment::new(kind, &raw[body_start..text_end]));
                        pos = after;
                    }
                    BodyScan::Nested { at, inner } => {
                        errors.push(ParseDiagnostic::new(
                            DiagnosticCode::NestedTag,
                            (at, at + open_tag(inner).len()),
                            format!("<{}> opened inside <{}>", inner.tag(), kind.tag()),
                        ));
                        // Resynchronize after the offending opener.
                        pos = at + open_tag(inner).len();
                    }
                    BodyScan::Mismatched { at, closer } => {
                        errors.push(ParseDiagnostic::new(
                            DiagnosticCode::UnbalancedTag,
                            (at, at + close_tag(closer).len()),
                            format!("</{}> closes <{}>", closer.tag(), kind.tag()),
                        ));
                        pos = at + close_tag(closer).len();
                    }
                    BodyScan::Unterminated => {
                        errors.push(ParseDiagnostic::new(
                            DiagnosticCode::UnbalancedTag,
                            (tag_start, raw.len()),
                            format!("<{}> is never closed", kind.tag()),
                        ));
                        pos = raw.len();
                    }
                }
            }
            None => {
                flag_gap_text(raw, pos, raw.len(), &mut warnings);
                break;
            }
        }
    }

    check_structure(&segments, raw.len(), require_answer, &mut errors, &mut warnings);

    if errors.is_empty() {
        Ok(Parsed {
            trajectory: Trajectory {
                question_id: String::new(),
                segments,
                step_logprobs: Vec::new(),
                meta: empty_meta(),
            },
            warnings,
        })
    } else {
        errors.extend(warnings);
        Err(errors)
    }
}

/// Structural checks that need the whole segment list.
fn check_structure(
    segments: &[Segment],
    len: usize,
    require_answer: bool,
    errors: &mut Vec<ParseDiagnostic>,
    warnings: &mut Vec<ParseDiagnostic>,
) {
    let end = (len, len);
    for (i, seg) in segments.iter().enumerate() {
        match seg.kind {
            SegmentKind::Search => {
                if seg.text.trim().is_empty() {
                    errors.push(ParseDiagnostic::new(
                        DiagnosticCode::EmptySearch,
                        end,
                        format!("search segment {i} is empty after trimming"),
                    ));
                }
                if segments.get(i + 1).map(|s| s.kind) != Some(SegmentKind::Information) {
                    errors.push(ParseDiagnostic::new(
                        DiagnosticCode::UnpairedSearch,
                        end,
                        format!("search segment {i} is not followed by an information segment"),
                    ));
                }
            }
            SegmentKind::Information => {
                if i == 0 || segments[i - 1].kind != SegmentKind::Search {
                    errors.push(ParseDiagnostic::new(
                        DiagnosticCode::OrphanInformation,
                        end,
                        format!("information segment {i} has no preceding search"),
                    ));
                }
            }
            _ => {}
        }
    }
    let answers = segments.iter().filter(|s| s.kind == SegmentKind::Answer).count();
    if answers == 0 {
        let diag =
            ParseDiagnostic::new(DiagnosticCode::MissingAnswer, end, "no answer segment");
        if require_answer {
            errors.push(diag);
        } else {
            warnings.push(diag);
        }
    } else if answers > 2 {
        warnings.push(ParseDiagnostic::new(
            DiagnosticCode::ExtraAnswers,
            end,
            format!("{answers} answer segments; generation allows at most two"),
        ));
    }
}

fn open_tag(kind: SegmentKind) -> String {
    format!("<{}>", kind.tag())
}

fn close_tag(kind: SegmentKind) -> String {
    format!("</{}>", kind.tag())
}

/// Finds the next recognized opening or closing tag at or after `from`.
/// Unknown `<...>` sequences are plain text.
fn next_tag(raw: &str, from: usize) -> Option<(usize, SegmentKind, bool)> {
    let bytes = raw.as_bytes();
    let mut i = from;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let rest = &raw[i..];
            for kind in SegmentKind::ALL {
                if rest.starts_with(&open_tag(kind)) {
                    return Some((i, kind, false));
                }
                if rest.starts_with(&close_tag(kind)) {
                    return Some((i, kind, true));
                }
            }
        }
        i += 1;
    }
    None
}

enum BodyScan {
    /// Body text ends at `text_end`; scanning resumes at `after`.
    Closed { text_end: usize, after: usize },
    /// Another opening tag appeared inside the body.
    Nested { at: usize, inner: SegmentKind },
    /// A closing tag for a different kind appeared inside the body.
    Mismatched { at: usize, closer: SegmentKind },
    /// End of input before the closing tag.
    Unterminated,
}

/// Scans a segment body for its closing tag, rejecting nested openers and
/// mismatched closers.
fn scan_body(raw: &str, body_start: usize, kind: SegmentKind) -> BodyScan {
    let closer = close_tag(kind);
    match next_tag(raw, body_start) {
        Some((at, found, true)) if found == kind => {
            BodyScan::Closed { text_end: at, after: at + closer.len() }
        }
        Some((at, found, true)) => BodyScan::Mismatched { at, closer: found },
        Some((at, found, false)) => BodyScan::Nested { at, inner: found },
        None => BodyScan::Unterminated,
    }
}

/// Records a `TrailingText` warning if `raw[from..to]` holds anything but
/// whitespace.
fn flag_gap_text(raw: &str, from: usize, to: usize, warnings: &mut Vec<ParseDiagnostic>) {
    if from < to && !raw[from..to].trim().is_empty() {
        warnings.push(ParseDiagnostic::new(
            DiagnosticCode::TrailingText,
            (from, to),
            "text outside any segment",
        ));
    }
}

/// Canonical serialization: `<tag>text</tag>` per segment, one newline
/// between segments. Inverse of [`parse_trajectory`] on valid trajectories.
pub fn render_trajectory(t: &Trajectory) -> String {
    t.segments
        .iter()
        .map(|s| format!("<{k}>{}</{k}>", s.text, k = s.kind.tag()))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Trajectory {
    /// Builds a generated trajectory with empty metadata.
    pub fn new(question_id: impl Into<String>, segments: Vec<Segment>) -> Self {
        Trajectory {
            question_id: question_id.into(),
            segments,
            step_logprobs: Vec::new(),
            meta: empty_meta(),
        }
    }

    /// Text of the last answer segment, whitespace-trimmed. The last answer
    /// — not the first — is the prediction: reflection may revise.
    pub fn final_answer(&self) -> Result<&str, TraceError> {
        self.segments
            .iter()
            .rev()
            .find(|s| s.kind == SegmentKind::Answer)
            .map(|s| s.text.trim())
            .ok_or(TraceError::NoAnswer)
    }

    /// All answer texts in order, trimmed. Empty for answer-free partial
    /// traces.
    pub fn intermediate_answers(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Answer)
            .map(|s| s.text.trim())
            .collect()
    }

    /// Number of search/information rounds.
    pub fn retrieval_count(&self) -> usize {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Information).count()
    }

    /// The prefix of this trajectory through the `i`-th information segment
    /// (1-based). The prefix keeps the question id but drops decision
    /// log-probs: a truncated segment list no longer aligns with them.
    pub fn prefix_upto_retrieval(&self, i: usize) -> Result<Trajectory, TraceError> {
        let count = self.retrieval_count();
        if i == 0 || i > count {
            return Err(TraceError::RetrievalOutOfRange { index: i, count });
        }
        let mut seen = 0;
        let mut end = 0;
        for (idx, seg) in self.segments.iter().enumerate() {
            if seg.kind == SegmentKind::Information {
                seen += 1;
                if seen == i {
                    end = idx + 1;
                    break;
                }
            }
        }
        Ok(Trajectory::new(self.question_id.clone(), self.segments[..end].to_vec()))
    }

    /// The trajectory with every answer segment removed: the
    /// reasoning-and-evidence view that sufficiency judges see.
    pub fn reasoning_prefix(&self) -> Trajectory {
        Trajectory::new(
            self.question_id.clone(),
            self.segments
                .iter()
                .filter(|s| s.kind != SegmentKind::Answer)
                .cloned()
                .collect(),
        )
    }
}
