//! Sufficiency and thinking-quality judges.
//!
//! The trainer talks to a [`Judge`]; two implementations exist:
//!
//! * [`OracleJudge`] — exact and deterministic, built from the world's own
//!   fact sentences and the [`ThinkingRubric`](crate::reward::ThinkingRubric).
//! * [`ExternalJudge`] — a client for out-of-process judges speaking
//!   line-delimited JSON over a spawned subprocess or a TCP connection.
//!
//! The wire protocol is one JSON object per line. Request:
//! `{"kind":"sufficient"|"thinking","question":…,"trajectory":…,"gold":…,
//! "request_id":…}`; reply: `{"request_id":…,"score":…}`. Replies are
//! matched by `request_id`; scores outside the legal range are clamped and
//! logged rather than failed. Requests are issued one at a time, so at most
//! one is ever in flight.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::ThinkingRubric;
use crate::trace::{render_trajectory, Trajectory};
use crate::world::{oracle_sufficient, Question, WorldSpec};

/// Default reply deadline for external judges.
pub const DEFAULT_JUDGE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge endpoint {endpoint:?}: {source}")]
    Connect { endpoint: String, source: std::io::Error },
    #[error("judge i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("judge reply not valid JSON: {0}")]
    Malformed(String),
    #[error("judge did not reply within {0:?}")]
    Timeout(Duration),
    #[error("judge connection closed")]
    Closed,
}

/// Scores trajectories: a binary sufficiency verdict over the
/// answer-stripped reasoning view, and a `[0, 1]` thinking score over the
/// full trajectory.
pub trait Judge {
    fn sufficient(&mut self, q: &Question, rd: &Trajectory, gold: &str)
        -> Result<bool, JudgeError>;
    fn thinking(&mut self, q: &Question, t: &Trajectory, gold: &str) -> Result<f64, JudgeError>;
}

/// The programmatic judge: sufficiency by exact fact-sentence containment,
/// thinking by the deterministic rubric. Infallible and rng-free.
pub struct OracleJudge<'w> {
    world: &'w WorldSpec,
    rubric: ThinkingRubric,
}

impl<'w> OracleJudge<'w> {
    pub fn new(world: &'w WorldSpec, rubric: ThinkingRubric) -> Self {
        OracleJudge { world, rubric }
    }
}

impl Judge for OracleJudge<'_> {
    fn sufficient(
        &mut self,
        q: &Question,
        rd: &Trajectory,
        _gold: &str,
    ) -> Result<bool, JudgeError> {
        Ok(oracle_sufficient(q, rd))
    }

    fn thinking(&mut self, q: &Question, t: &Trajectory, _gold: &str) -> Result<f64, JudgeError> {
        Ok(self.rubric.score(self.world, q, t))
    }
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    kind: &'a str,
    question: &'a str,
    trajectory: String,
    gold: &'a str,
    request_id: String,
}

#[derive(Deserialize)]
struct JudgeReply {
    request_id: String,
    score: f64,
}

enum Writer {
    Tcp(TcpStream),
    Child(Child),
}

impl Writer {
    fn sink(&mut self) -> Result<&mut dyn Write, JudgeError> {
        match self {
            Writer::Tcp(s) => Ok(s),
            Writer::Child(c) => {
                c.stdin.as_mut().map(|s| s as &mut dyn Write).ok_or(JudgeError::Closed)
            }
        }
    }
}

/// Client for an out-of-process judge.
///
/// `endpoint` is either `cmd:<program> [args…]` (the judge is spawned and
/// spoken to over stdin/stdout) or a `host:port` TCP address. Replies
/// arriving after the deadline are discarded; a reply with a score outside
/// the legal range is clamped and logged.
pub struct ExternalJudge {
    writer: Writer,
    replies: Receiver<Result<String, std::io::Error>>,
    timeout: Duration,
    next_id: u64,
}

impl ExternalJudge {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, JudgeError> {
        let wrap = |source| JudgeError::Connect { endpoint: endpoint.to_owned(), source };
        let (writer, reader): (Writer, Box<dyn Read + Send>) =
            if let Some(cmd) = endpoint.strip_prefix("cmd:") {
                let mut parts = cmd.split_whitespace();
                let program = parts.next().ok_or_else(|| {
                    wrap(std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"))
                })?;
                let mut child = Command::new(program)
                    .args(parts)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(wrap)?;
                let stdout = child.stdout.take().ok_or(JudgeError::Closed)?;
                (Writer::Child(child), Box::new(stdout))
            } else {
                let stream = TcpStream::connect(endpoint).map_err(wrap)?;
                let read_half = stream.try_clone().map_err(wrap)?;
                (Writer::Tcp(stream), Box::new(read_half))
            };

        // A detached reader thread turns the blocking byte stream into
        // timeout-able line delivery. It exits when the stream closes.
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut lines = BufReader::new(reader).lines();
            while let Some(line) = lines.next() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        Ok(ExternalJudge { writer, replies: rx, timeout, next_id: 0 })
    }

    fn request(&mut self, kind: &str, q: &Question, t: &Trajectory, gold: &str)
        -> Result<f64, JudgeError>
    {
        self.next_id += 1;
        let id = format!("r{}", self.next_id);
        let req = JudgeRequest {
            kind,
            question: &q.text,
            trajectory: render_trajectory(t),
            gold,
            request_id: id.clone(),
        };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        let sink = self.writer.sink()?;
        sink.write_all(line.as_bytes())?;
        sink.flush()?;

        // Drain replies until ours arrives or the deadline passes. Stale
        // replies (from a previously timed-out request) are skipped.
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining =
                deadline.checked_duration_since(Instant::now()).unwrap_or(Duration::ZERO);
            match self.replies.recv_timeout(remaining) {
                Ok(Ok(text)) => match serde_json::from_str::<JudgeReply>(&text) {
                    Ok(reply) if reply.request_id == id => return Ok(reply.score),
                    Ok(stale) => {
                        log::warn!("judge: skipping stale reply for {}", stale.request_id);
                    }
                    Err(e) => return Err(JudgeError::Malformed(format!("{e}: {text}"))),
                },
                Ok(Err(e)) => return Err(JudgeError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(JudgeError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(JudgeError::Closed),
            }
        }
    }
}

impl Judge for ExternalJudge {
    fn sufficient(&mut self, q: &Question, rd: &Trajectory, gold: &str)
        -> Result<bool, JudgeError>
    {
        let score = self.request("sufficient", q, rd, gold)?;
        if score != 0.0 && score != 1.0 {
            log::warn!("judge: sufficiency score {score} clamped to 0/1");
        }
        Ok(score >= 0.5)
    }

    fn thinking(&mut self, q: &Question, t: &Trajectory, gold: &str) -> Result<f64, JudgeError> {
        let score = self.request("thinking", q, t, gold)?;
        if !(0.0..=1.0).contains(&score) || score.is_nan() {
            log::warn!("judge: thinking score {score} clamped to [0, 1]");
        }
        if score.is_nan() {
            return Ok(0.0);
        }
        Ok(score.clamp(0.0, 1.0))
    }
}

impl Drop for ExternalJudge {
    fn drop(&mut self) {
        if let Writer::Child(child) = &mut self.writer {
            // Closing stdin lets a well-behaved judge exit; then reap it.
            child.stdin.take();
            let _ = child.wait();
        }
    }
}
