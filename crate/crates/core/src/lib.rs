//! Framework for automated facilitator agents in group text discussions.
//!
//! An agent observes a room's full transcript by polling, runs each enabled
//! [`Feature`](engine::Feature) independently, and posts the resulting
//! interventions. Features are stateless; an idempotency key stored on every
//! agent message keeps each triggering condition from being acted on twice.

pub mod adapter;
pub mod clock;
pub mod engine;
pub mod features;
pub mod metrics;
pub mod replay;
pub mod transcript;

pub use adapter::{
    run_agent, run_poll_cycle, AdapterError, ChatAdapter, CycleError, PollSettings, RunError,
    SessionSummary, StopCondition, StopSignal,
};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use engine::{
    dedupe, load_agent_config, AgentConfig, ConfigError, Engine, EvalContext, Evaluation, Feature,
    FeatureError, FeatureRegistry, Intervention, SessionConfig,
};
pub use replay::{ReplayAdapter, ReplayScript, ScriptError};
pub use transcript::{
    author_share, AuthorId, Draft, Message, Origin, TimestampMs, Transcript, TranscriptError,
};
