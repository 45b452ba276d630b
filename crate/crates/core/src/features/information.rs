use serde::{Deserialize, Serialize};

use super::{Validate, INFORMATION};
use crate::engine::{EvalContext, Feature, FeatureError, Intervention, SessionConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub url: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InformationConfig {
    #[serde(default = "default_lull_seconds")]
    pub lull_seconds: u64,
    #[serde(default)]
    pub links: Vec<Link>,
}

fn default_lull_seconds() -> u64 {
    120
}

impl Default for InformationConfig {
    fn default() -> Self {
        Self {
            lull_seconds: default_lull_seconds(),
            links: Vec::new(),
        }
    }
}

impl Validate for InformationConfig {
    fn validate(&self, _: &SessionConfig) -> Result<(), String> {
        if self.lull_seconds == 0 {
            return Err("lull_seconds must be positive".into());
        }
        Ok(())
    }
}

/// Posts the next unused resource link once the room has been silent for
/// `lull_seconds`. Any message, including the agent's own link, restarts
/// the silence timer.
#[derive(Debug, Clone)]
pub struct Information {
    config: InformationConfig,
}

impl Information {
    pub fn new(config: InformationConfig) -> Self {
        Self { config }
    }
}

impl Feature for Information {
    fn name(&self) -> &str {
        INFORMATION
    }

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Vec<Intervention>, FeatureError> {
        let t = ctx.transcript;
        if t.humans().next().is_none() {
            return Ok(Vec::new());
        }
        let Some(last) = t.last_activity(false) else {
            return Ok(Vec::new());
        };
        let lull_ms = self.config.lull_seconds.saturating_mul(1000) as i64;
        if ctx.now.saturating_sub(last) < lull_ms {
            return Ok(Vec::new());
        }
        let consumed = t
            .agent_messages()
            .filter(|m| m.feature_tag.as_deref() == Some(INFORMATION))
            .count();
        let Some(link) = self.config.links.get(consumed) else {
            return Ok(Vec::new());
        };
        Ok(vec![Intervention {
            body: format!(
                "Here's a resource that might help: {} — {}",
                link.url, link.note
            ),
            feature_tag: INFORMATION.into(),
            idempotency_key: format!("{INFORMATION}:{consumed}"),
            trigger_seq: t.tail_seq(),
        }])
    }
}
