//! Deterministic replay of a recorded session against a virtual clock.
//!
//! A script is newline-delimited `{"at_ms":..,"author":..,"body":..}`
//! records with non-decreasing `at_ms`, relative to the virtual session
//! start. Scripted human messages become visible once the clock reaches
//! their time; agent posts are stamped with the current virtual time.

use serde::Deserialize;
use thiserror::Error;

use crate::adapter::{AdapterError, ChatAdapter};
use crate::clock::{Clock, VirtualClock};
use crate::engine::Intervention;
use crate::transcript::{validate_draft, AuthorId, Draft, Message, TimestampMs, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRecord {
    pub at_ms: TimestampMs,
    pub author: AuthorId,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("malformed script at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayScript {
    records: Vec<ScriptRecord>,
}

impl ReplayScript {
    /// Parses a script; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut records: Vec<ScriptRecord> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let malformed = |reason: String| ScriptError::Malformed {
                line: line_no,
                reason,
            };
            if line.trim().is_empty() {
                continue;
            }
            let record: ScriptRecord =
                serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            if record.at_ms < 0 {
                return Err(malformed("at_ms must be non-negative".into()));
            }
            if let Some(prev) = records.last() {
                if record.at_ms < prev.at_ms {
                    return Err(malformed(format!(
                        "at_ms {} is earlier than the previous record at {}",
                        record.at_ms, prev.at_ms
                    )));
                }
            }
            if record.body.trim().is_empty() {
                return Err(malformed("body is empty".into()));
            }
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ScriptRecord] {
        &self.records
    }

    pub fn last_at_ms(&self) -> Option<TimestampMs> {
        self.records.last().map(|r| r.at_ms)
    }
}

/// In-memory room driven by a script and a virtual clock.
#[derive(Debug, Clone)]
pub struct ReplayAdapter {
    script: ReplayScript,
    released: usize,
    transcript: Transcript,
    clock: VirtualClock,
}

impl ReplayAdapter {
    pub fn new(
        script: ReplayScript,
        agent_author: AuthorId,
        clock: VirtualClock,
    ) -> Result<Self, ScriptError> {
        for (i, r) in script.records.iter().enumerate() {
            let draft = Draft::human(r.author.clone(), r.body.clone());
            validate_draft(&draft, Some(&agent_author)).map_err(|e| ScriptError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(Self {
            script,
            released: 0,
            transcript: Transcript::new(Some(agent_author)),
            clock,
        })
    }

    fn release(&mut self) -> Result<(), AdapterError> {
        let now = self.clock.now_ms();
        while let Some(r) = self.script.records.get(self.released) {
            if r.at_ms > now {
                break;
            }
            self.transcript
                .push(Draft::human(r.author.clone(), r.body.clone()), r.at_ms)
                .map_err(|e| AdapterError::InvalidData(e.to_string()))?;
            self.released += 1;
        }
        Ok(())
    }

    /// The room as it stands, including unreleased-but-due messages only
    /// after the next fetch or post.
    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

impl ChatAdapter for ReplayAdapter {
    fn fetch_transcript(&mut self) -> Result<Transcript, AdapterError> {
        self.release()?;
        Ok(self.transcript.clone())
    }

    fn post_interventions(
        &mut self,
        interventions: &[Intervention],
    ) -> Result<Vec<Message>, AdapterError> {
        self.release()?;
        let now = self.clock.now_ms();
        let agent = self
            .transcript
            .agent_author()
            .cloned()
            .expect("replay transcript always has an agent");
        interventions
            .iter()
            .map(|i| {
                self.transcript
                    .push(i.to_draft(&agent), now)
                    .cloned()
                    .map_err(|e| AdapterError::Rejected(e.to_string()))
            })
            .collect()
    }
}
