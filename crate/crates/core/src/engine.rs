//! Agent configuration, the feature contract, and independent evaluation of
//! every enabled feature against a transcript.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::transcript::{AuthorId, Draft, TimestampMs, Transcript};

/// An agent-generated message candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub body: String,
    pub feature_tag: String,
    /// Identifies the triggering condition; equal conditions yield equal keys.
    pub idempotency_key: String,
    /// Seq of the last transcript message at evaluation time, -1 when empty.
    pub trigger_seq: i64,
}

impl Intervention {
    pub fn to_draft(&self, agent: &AuthorId) -> Draft {
        Draft::agent(
            agent.clone(),
            self.body.clone(),
            self.feature_tag.clone(),
            self.idempotency_key.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub start_ms: Option<TimestampMs>,
    #[serde(default)]
    pub duration_min: Option<u32>,
}

impl SessionConfig {
    pub fn duration_ms(&self) -> Option<i64> {
        self.duration_min.map(|m| i64::from(m) * 60_000)
    }
}

/// A loaded agent configuration. A feature is enabled iff it has a block
/// in `features`; blocks keep document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub agent_author: AuthorId,
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default)]
    pub features: FeatureBlocks,
}

/// Ordered feature-name → configuration map that rejects duplicate names.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FeatureBlocks(pub IndexMap<String, Value>);

impl<'de> Deserialize<'de> for FeatureBlocks {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BlocksVisitor;

        impl<'de> Visitor<'de> for BlocksVisitor {
            type Value = FeatureBlocks;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of feature name to configuration")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = IndexMap::new();
                while let Some((name, block)) = map.next_entry::<String, Value>()? {
                    if out.contains_key(&name) {
                        return Err(serde::de::Error::custom(format!(
                            "duplicate feature `{name}`"
                        )));
                    }
                    out.insert(name, block);
                }
                Ok(FeatureBlocks(out))
            }
        }

        deserializer.deserialize_map(BlocksVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("malformed agent configuration: {0}")]
    Malformed(String),
    #[error("no registered implementation for feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid parameter for `{feature}`: {reason}")]
    InvalidParameter { feature: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct FeatureError(pub String);

/// Everything a feature may look at during one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub transcript: &'a Transcript,
    pub agent_author: &'a AuthorId,
    pub now: TimestampMs,
    pub session: &'a SessionConfig,
}

/// A conversational agent feature: a deterministic rule from a transcript to
/// a list of interventions. Implementations hold their parsed configuration
/// and must not keep mutable state between evaluations.
pub trait Feature: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Vec<Intervention>, FeatureError>;
}

type Builder =
    Box<dyn Fn(&Value, &SessionConfig) -> Result<Box<dyn Feature>, String> + Send + Sync>;

/// Maps feature names to constructors that parse and validate a
/// configuration block.
#[derive(Default)]
pub struct FeatureRegistry {
    builders: BTreeMap<String, Builder>,
}

impl fmt::Debug for FeatureRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.builders.keys()).finish()
    }
}

impl FeatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the four built-in facilitation rules.
    pub fn with_builtins() -> Self {
        let mut registry = Self::new();
        crate::features::register_builtins(&mut registry);
        registry
    }

    pub fn register<F>(&mut self, name: impl Into<String>, builder: F) -> &mut Self
    where
        F: Fn(&Value, &SessionConfig) -> Result<Box<dyn Feature>, String> + Send + Sync + 'static,
    {
        self.builders.insert(name.into(), Box::new(builder));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.builders.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(
        &self,
        name: &str,
        block: &Value,
        session: &SessionConfig,
    ) -> Result<Box<dyn Feature>, ConfigError> {
        let builder = self
            .builders
            .get(name)
            .ok_or_else(|| ConfigError::UnknownFeature(name.to_string()))?;
        builder(block, session).map_err(|reason| ConfigError::InvalidParameter {
            feature: name.to_string(),
            reason,
        })
    }
}

/// Parses and validates an agent configuration document.
pub fn load_agent_config(
    text: &str,
    registry: &FeatureRegistry,
) -> Result<AgentConfig, ConfigError> {
    let config: AgentConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    if config.session.duration_min == Some(0) {
        return Err(ConfigError::InvalidParameter {
            feature: "session".into(),
            reason: "duration_min must be positive".into(),
        });
    }
    for (name, block) in &config.features.0 {
        registry.build(name, block, &config.session)?;
    }
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFailure {
    pub feature: String,
    pub error: FeatureError,
}

/// Output of one evaluation pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evaluation {
    pub interventions: Vec<Intervention>,
    pub failures: Vec<FeatureFailure>,
}

/// A configured agent: the enabled features, instantiated in config order.
#[derive(Debug)]
pub struct Engine {
    config: AgentConfig,
    features: Vec<Box<dyn Feature>>,
}

impl Engine {
    pub fn new(config: AgentConfig, registry: &FeatureRegistry) -> Result<Self, ConfigError> {
        let features = config
            .features
            .0
            .iter()
            .map(|(name, block)| registry.build(name, block, &config.session))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { config, features })
    }

    pub fn from_json(text: &str, registry: &FeatureRegistry) -> Result<Self, ConfigError> {
        Self::new(load_agent_config(text, registry)?, registry)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn agent_author(&self) -> &AuthorId {
        &self.config.agent_author
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.config.features.0.keys().map(String::as_str)
    }

    /// Runs every enabled feature against the same snapshot and concatenates
    /// their outputs in config order. A failing feature contributes nothing
    /// and does not affect the others.
    pub fn evaluate_all(&self, transcript: &Transcript, now: TimestampMs) -> Evaluation {
        let ctx = EvalContext {
            transcript,
            agent_author: &self.config.agent_author,
            now,
            session: &self.config.session,
        };
        let mut out = Evaluation::default();
        for (name, feature) in self.config.features.0.keys().zip(&self.features) {
            match feature.evaluate(&ctx) {
                Ok(found) => out.interventions.extend(found),
                Err(error) => {
                    tracing::warn!(feature = %name, %error, "feature evaluation failed");
                    out.failures.push(FeatureFailure {
                        feature: name.clone(),
                        error,
                    });
                }
            }
        }
        out
    }
}

/// Drops candidates whose key already appears on an agent message in the
/// transcript, and same-cycle repeats after the first.
pub fn dedupe(candidates: Vec<Intervention>, transcript: &Transcript) -> Vec<Intervention> {
    let mut seen: HashSet<String> = transcript
        .agent_messages()
        .filter_map(|m| m.idempotency_key.clone())
        .collect();
    candidates
        .into_iter()
        .filter(|c| seen.insert(c.idempotency_key.clone()))
        .collect()
}
