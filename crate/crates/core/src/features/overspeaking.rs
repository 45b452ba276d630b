use serde::{Deserialize, Serialize};

use super::{notice_target, targeted_key, Validate, OVERSPEAKING};
use crate::engine::{EvalContext, Feature, FeatureError, Intervention, SessionConfig};
use crate::transcript::author_share;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverspeakingConfig {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_share_threshold")]
    pub share_threshold: f64,
}

fn default_window() -> usize {
    8
}

fn default_share_threshold() -> f64 {
    0.5
}

impl Default for OverspeakingConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            share_threshold: default_share_threshold(),
        }
    }
}

impl Validate for OverspeakingConfig {
    fn validate(&self, _: &SessionConfig) -> Result<(), String> {
        if self.window < 2 {
            return Err("window must be at least 2".into());
        }
        if !(self.share_threshold > 0.0 && self.share_threshold < 1.0) {
            return Err("share_threshold must lie strictly between 0 and 1".into());
        }
        Ok(())
    }
}

/// Addresses a participant who authored strictly more than
/// `share_threshold` of the last `window` human messages.
///
/// A notice stays in force while it lies inside the current window's span
/// (from the window's first message onward), so the same participant is not
/// re-addressed until the window has slid past the previous notice.
#[derive(Debug, Clone)]
pub struct Overspeaking {
    config: OverspeakingConfig,
}

impl Overspeaking {
    pub fn new(config: OverspeakingConfig) -> Self {
        Self { config }
    }
}

impl Feature for Overspeaking {
    fn name(&self) -> &str {
        OVERSPEAKING
    }

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Vec<Intervention>, FeatureError> {
        let t = ctx.transcript;
        let window = t.human_window(self.config.window);
        if window.len() < self.config.window {
            return Ok(Vec::new());
        }
        let span_start = window[0].seq as usize;
        let span_end = window[window.len() - 1].seq;
        let mut out = Vec::new();
        for (author, count) in author_share(window.iter().copied()) {
            if (count as f64) / (window.len() as f64) <= self.config.share_threshold {
                continue;
            }
            let in_force = t.messages()[span_start..]
                .iter()
                .any(|m| notice_target(m, OVERSPEAKING) == Some(author.as_str()));
            if in_force {
                continue;
            }
            out.push(Intervention {
                body: format!("@{author}, let's make space for others to weigh in."),
                feature_tag: OVERSPEAKING.into(),
                idempotency_key: targeted_key(OVERSPEAKING, &author, span_end),
                trigger_seq: t.tail_seq(),
            });
        }
        Ok(out)
    }
}
