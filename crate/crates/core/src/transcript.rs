//! Messages and transcripts.
//!
//! A [`Transcript`] is the entire ordered history of one room. Sequence
//! numbers are dense from zero and are the authoritative order; timestamps
//! are integer milliseconds and may tie.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since the Unix epoch (or since a virtual session start).
pub type TimestampMs = i64;

/// Opaque, non-empty participant identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AuthorId(String);

impl AuthorId {
    pub fn new(value: impl Into<String>) -> Result<Self, TranscriptError> {
        let value = value.into();
        if value.is_empty() {
            return Err(TranscriptError::EmptyAuthor);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AuthorId {
    type Error = TranscriptError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AuthorId> for String {
    fn from(id: AuthorId) -> Self {
        id.0
    }
}

impl fmt::Display for AuthorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Human,
    Agent,
}

/// One chat utterance.
///
/// The serde representation is the canonical record used on disk and on the
/// wire; field order is part of the format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub seq: u64,
    pub author: AuthorId,
    pub body: String,
    pub ts_ms: TimestampMs,
    pub origin: Origin,
    pub feature_tag: Option<String>,
    pub idempotency_key: Option<String>,
}

impl Message {
    pub fn is_human(&self) -> bool {
        self.origin == Origin::Human
    }

    pub fn is_agent(&self) -> bool {
        self.origin == Origin::Agent
    }

    /// Serializes to a single canonical JSON line (no trailing newline).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("message serialization is infallible")
    }
}

/// Content of a message not yet assigned a position in a transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draft {
    pub author: AuthorId,
    pub body: String,
    pub origin: Origin,
    pub feature_tag: Option<String>,
    pub idempotency_key: Option<String>,
}

impl Draft {
    pub fn human(author: AuthorId, body: impl Into<String>) -> Self {
        Self {
            author,
            body: body.into(),
            origin: Origin::Human,
            feature_tag: None,
            idempotency_key: None,
        }
    }

    pub fn agent(
        author: AuthorId,
        body: impl Into<String>,
        feature_tag: impl Into<String>,
        idempotency_key: impl Into<String>,
    ) -> Self {
        Self {
            author,
            body: body.into(),
            origin: Origin::Agent,
            feature_tag: Some(feature_tag.into()),
            idempotency_key: Some(idempotency_key.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("author id must be non-empty")]
    EmptyAuthor,
    #[error("message body is empty")]
    EmptyBody,
    #[error("timestamp {got} is earlier than the transcript tail at {tail}")]
    OutOfOrderTimestamp { tail: TimestampMs, got: TimestampMs },
    #[error("expected seq {expected}, found {got}")]
    NonDenseSeq { expected: u64, got: u64 },
    #[error("agent-origin message from {author} but the room agent is {agent:?}")]
    NotTheAgent {
        author: AuthorId,
        agent: Option<AuthorId>,
    },
    #[error("human-origin message authored by the room agent {0}")]
    AgentPostedAsHuman(AuthorId),
    #[error(
        "agent messages need a feature tag and idempotency key; human messages must have neither"
    )]
    AgentMetadata,
    #[error("transcript contains agent messages from more than one author")]
    MultipleAgents,
}

/// Checks the per-message invariants that do not depend on position.
pub fn validate_draft(draft: &Draft, agent: Option<&AuthorId>) -> Result<(), TranscriptError> {
    if draft.body.trim().is_empty() {
        return Err(TranscriptError::EmptyBody);
    }
    let has_meta = draft.feature_tag.is_some() && draft.idempotency_key.is_some();
    let has_any_meta = draft.feature_tag.is_some() || draft.idempotency_key.is_some();
    match draft.origin {
        Origin::Agent => {
            if agent != Some(&draft.author) {
                return Err(TranscriptError::NotTheAgent {
                    author: draft.author.clone(),
                    agent: agent.cloned(),
                });
            }
            if !has_meta {
                return Err(TranscriptError::AgentMetadata);
            }
        }
        Origin::Human => {
            if agent == Some(&draft.author) {
                return Err(TranscriptError::AgentPostedAsHuman(draft.author.clone()));
            }
            if has_any_meta {
                return Err(TranscriptError::AgentMetadata);
            }
        }
    }
    Ok(())
}

/// An immutable snapshot of a room's full message history.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    messages: Vec<Message>,
    agent_author: Option<AuthorId>,
}

impl Transcript {
    pub fn new(agent_author: Option<AuthorId>) -> Self {
        Self {
            messages: Vec::new(),
            agent_author,
        }
    }

    /// Builds a transcript from already-sequenced messages, checking every
    /// invariant.
    pub fn from_messages(
        agent_author: Option<AuthorId>,
        messages: Vec<Message>,
    ) -> Result<Self, TranscriptError> {
        let mut prev_ts = None;
        for (i, m) in messages.iter().enumerate() {
            if m.seq != i as u64 {
                return Err(TranscriptError::NonDenseSeq {
                    expected: i as u64,
                    got: m.seq,
                });
            }
            if let Some(tail) = prev_ts {
                if m.ts_ms < tail {
                    return Err(TranscriptError::OutOfOrderTimestamp { tail, got: m.ts_ms });
                }
            }
            prev_ts = Some(m.ts_ms);
            validate_draft(&draft_of(m), agent_author.as_ref())?;
        }
        Ok(Self {
            messages,
            agent_author,
        })
    }

    /// Like [`Transcript::from_messages`], taking the agent author from the
    /// agent-origin records themselves.
    pub fn from_records(messages: Vec<Message>) -> Result<Self, TranscriptError> {
        let mut agent: Option<AuthorId> = None;
        for m in messages.iter().filter(|m| m.is_agent()) {
            match &agent {
                None => agent = Some(m.author.clone()),
                Some(a) if *a != m.author => return Err(TranscriptError::MultipleAgents),
                Some(_) => {}
            }
        }
        Self::from_messages(agent, messages)
    }

    pub fn append(self, draft: Draft, timestamp: TimestampMs) -> Result<Self, TranscriptError> {
        let mut next = self;
        next.push(draft, timestamp)?;
        Ok(next)
    }

    pub(crate) fn push(
        &mut self,
        draft: Draft,
        timestamp: TimestampMs,
    ) -> Result<&Message, TranscriptError> {
        validate_draft(&draft, self.agent_author.as_ref())?;
        if let Some(tail) = self.messages.last() {
            if timestamp < tail.ts_ms {
                return Err(TranscriptError::OutOfOrderTimestamp {
                    tail: tail.ts_ms,
                    got: timestamp,
                });
            }
        }
        let Draft {
            author,
            body,
            origin,
            feature_tag,
            idempotency_key,
        } = draft;
        self.messages.push(Message {
            seq: self.messages.len() as u64,
            author,
            body,
            ts_ms: timestamp,
            origin,
            feature_tag,
            idempotency_key,
        });
        Ok(self.messages.last().expect("just pushed"))
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn agent_author(&self) -> Option<&AuthorId> {
        self.agent_author.as_ref()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last(&self) -> Option<&Message> {
        self.messages.last()
    }

    /// Seq of the last message, or -1 for an empty transcript.
    pub fn tail_seq(&self) -> i64 {
        self.messages.last().map_or(-1, |m| m.seq as i64)
    }

    pub fn humans(&self) -> impl DoubleEndedIterator<Item = &Message> + '_ {
        self.messages.iter().filter(|m| m.is_human())
    }

    pub fn agent_messages(&self) -> impl DoubleEndedIterator<Item = &Message> + '_ {
        self.messages.iter().filter(|m| m.is_agent())
    }

    /// The last `n` human messages in seq order.
    pub fn human_window(&self, n: usize) -> Vec<&Message> {
        let mut window: Vec<&Message> = self.humans().rev().take(n).collect();
        window.reverse();
        window
    }

    pub fn last_activity(&self, humans_only: bool) -> Option<TimestampMs> {
        self.messages
            .iter()
            .rev()
            .find(|m| !humans_only || m.is_human())
            .map(|m| m.ts_ms)
    }

    pub fn contains_key(&self, idempotency_key: &str) -> bool {
        self.agent_messages()
            .any(|m| m.idempotency_key.as_deref() == Some(idempotency_key))
    }
}

fn draft_of(m: &Message) -> Draft {
    Draft {
        author: m.author.clone(),
        body: m.body.clone(),
        origin: m.origin,
        feature_tag: m.feature_tag.clone(),
        idempotency_key: m.idempotency_key.clone(),
    }
}

/// Per-author message counts over a window.
pub fn author_share<'a, I>(window: I) -> BTreeMap<AuthorId, usize>
where
    I: IntoIterator<Item = &'a Message>,
{
    let mut counts = BTreeMap::new();
    for m in window {
        *counts.entry(m.author.clone()).or_insert(0) += 1;
    }
    counts
}
