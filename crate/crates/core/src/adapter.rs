//! The chat-service integration boundary and the agent poll loop.
//!
//! Each poll cycle is one fetch of the full transcript, one evaluation of
//! every enabled feature, deduplication against keys already posted, and
//! at most one post. Cycles never overlap.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::clock::Clock;
use crate::engine::{dedupe, Engine, Intervention};
use crate::transcript::{Message, TimestampMs, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("chat service rejected the request: {0}")]
    Rejected(String),
    #[error("invalid data from chat service: {0}")]
    InvalidData(String),
}

/// Integration with one room of an external chat service.
pub trait ChatAdapter {
    /// Returns the entire history of the room.
    fn fetch_transcript(&mut self) -> Result<Transcript, AdapterError>;

    /// Posts interventions in order as agent messages, returning them with
    /// their assigned seq and timestamps.
    fn post_interventions(
        &mut self,
        interventions: &[Intervention],
    ) -> Result<Vec<Message>, AdapterError>;
}

impl<A: ChatAdapter + ?Sized> ChatAdapter for &mut A {
    fn fetch_transcript(&mut self) -> Result<Transcript, AdapterError> {
        (**self).fetch_transcript()
    }

    fn post_interventions(
        &mut self,
        interventions: &[Intervention],
    ) -> Result<Vec<Message>, AdapterError> {
        (**self).post_interventions(interventions)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CycleError {
    #[error("fetch failed: {0}")]
    FetchFailed(AdapterError),
    #[error("post failed: {0}")]
    PostFailed(AdapterError),
}

/// One fetch → evaluate → dedupe → post iteration.
pub fn run_poll_cycle<A: ChatAdapter + ?Sized>(
    adapter: &mut A,
    engine: &Engine,
    now: TimestampMs,
) -> Result<Vec<Message>, CycleError> {
    let transcript = adapter
        .fetch_transcript()
        .map_err(CycleError::FetchFailed)?;
    let evaluation = engine.evaluate_all(&transcript, now);
    let fresh = dedupe(evaluation.interventions, &transcript);
    if fresh.is_empty() {
        return Ok(Vec::new());
    }
    adapter
        .post_interventions(&fresh)
        .map_err(CycleError::PostFailed)
}

/// Shared flag for stopping a running agent from another thread.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_raised(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub enum StopCondition {
    Never,
    /// Stop once this many milliseconds have elapsed since the loop started.
    AfterDuration(i64),
    OnSignal(StopSignal),
    Any(Vec<StopCondition>),
}

impl StopCondition {
    fn reached(&self, elapsed_ms: i64) -> bool {
        match self {
            StopCondition::Never => false,
            StopCondition::AfterDuration(limit) => elapsed_ms >= *limit,
            StopCondition::OnSignal(signal) => signal.is_raised(),
            StopCondition::Any(all) => all.iter().any(|c| c.reached(elapsed_ms)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SettingsError {
    #[error("seconds_per_poll must be a positive number of at least one millisecond, got {0}")]
    PollInterval(String),
}

#[derive(Debug, Clone)]
pub struct PollSettings {
    poll_ms: i64,
    pub stop: StopCondition,
    /// The loop gives up after this many failed cycles in a row.
    pub max_consecutive_failures: u32,
}

impl PollSettings {
    pub const DEFAULT_SECONDS_PER_POLL: f64 = 2.0;

    pub fn new(seconds_per_poll: f64, stop: StopCondition) -> Result<Self, SettingsError> {
        let poll_ms = (seconds_per_poll * 1000.0).round();
        if !seconds_per_poll.is_finite() || seconds_per_poll <= 0.0 || poll_ms < 1.0 {
            return Err(SettingsError::PollInterval(seconds_per_poll.to_string()));
        }
        Ok(Self {
            poll_ms: poll_ms as i64,
            stop,
            max_consecutive_failures: 10,
        })
    }

    pub fn poll_ms(&self) -> i64 {
        self.poll_ms
    }
}

impl Default for PollSettings {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SECONDS_PER_POLL, StopCondition::Never).expect("valid default")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SessionSummary {
    pub cycles: u64,
    pub failed_cycles: u64,
    pub posted: u64,
    pub posted_by_feature: BTreeMap<String, u64>,
    pub started_ms: TimestampMs,
    pub ended_ms: TimestampMs,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("giving up after {consecutive} consecutive failed cycles: {last}")]
    PersistentFailure { consecutive: u32, last: CycleError },
}

/// Runs poll cycles on a fixed schedule of `poll_ms` ticks until the stop
/// condition holds. Cycles are strictly sequential; a cycle that overruns
/// its tick is followed immediately by the next one.
pub fn run_agent<A: ChatAdapter + ?Sized>(
    adapter: &mut A,
    engine: &Engine,
    settings: &PollSettings,
    clock: &dyn Clock,
) -> Result<SessionSummary, RunError> {
    let poll = settings.poll_ms;
    let start = clock.now_ms();
    let mut summary = SessionSummary {
        started_ms: start,
        ended_ms: start,
        ..Default::default()
    };
    let mut tick: i64 = 0;
    let mut consecutive = 0u32;
    loop {
        let due = start + tick * poll;
        let now = clock.now_ms();
        if now < due {
            clock.sleep_ms(due - now);
        }
        let now = clock.now_ms();
        if settings.stop.reached(now - start) {
            break;
        }
        summary.cycles += 1;
        match run_poll_cycle(adapter, engine, now) {
            Ok(posted) => {
                consecutive = 0;
                for m in &posted {
                    summary.posted += 1;
                    let tag = m.feature_tag.clone().unwrap_or_default();
                    *summary.posted_by_feature.entry(tag).or_insert(0) += 1;
                }
                if !posted.is_empty() {
                    tracing::info!(count = posted.len(), at = now, "posted interventions");
                }
            }
            Err(error) => {
                summary.failed_cycles += 1;
                consecutive += 1;
                tracing::warn!(%error, consecutive, "poll cycle failed");
                if consecutive >= settings.max_consecutive_failures {
                    return Err(RunError::PersistentFailure {
                        consecutive,
                        last: error,
                    });
                }
            }
        }
        tick += 1;
        let behind = (clock.now_ms() - start) / poll;
        tick = tick.max(behind);
    }
    summary.ended_ms = clock.now_ms();
    Ok(summary)
}
