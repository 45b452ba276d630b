use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{notice_target, targeted_key, Validate, UNDERSPEAKING};
use crate::engine::{EvalContext, Feature, FeatureError, Intervention, SessionConfig};
use crate::transcript::AuthorId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnderspeakingConfig {
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    8
}

impl Default for UnderspeakingConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
        }
    }
}

impl Validate for UnderspeakingConfig {
    fn validate(&self, _: &SessionConfig) -> Result<(), String> {
        if self.window == 0 {
            return Err("window must be at least 1".into());
        }
        Ok(())
    }
}

/// Addresses a participant once `window` human messages by others have
/// passed since their own last message. One notice per silence episode.
#[derive(Debug, Clone)]
pub struct Underspeaking {
    config: UnderspeakingConfig,
}

impl Underspeaking {
    pub fn new(config: UnderspeakingConfig) -> Self {
        Self { config }
    }
}

impl Feature for Underspeaking {
    fn name(&self) -> &str {
        UNDERSPEAKING
    }

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Vec<Intervention>, FeatureError> {
        let t = ctx.transcript;
        let total_humans = t.humans().count();
        // author -> (seq of last message, human messages up to and including it)
        let mut last_by: BTreeMap<&AuthorId, (u64, usize)> = BTreeMap::new();
        for (i, m) in t.humans().enumerate() {
            last_by.insert(&m.author, (m.seq, i + 1));
        }
        let mut out = Vec::new();
        for (author, (last_seq, upto)) in last_by {
            let since = total_humans - upto;
            if since < self.config.window {
                continue;
            }
            let already = t.messages()[last_seq as usize + 1..]
                .iter()
                .any(|m| notice_target(m, UNDERSPEAKING) == Some(author.as_str()));
            if already {
                continue;
            }
            out.push(Intervention {
                body: format!(
                    "@{author}, we haven't heard from you in a while — what do you think?"
                ),
                feature_tag: UNDERSPEAKING.into(),
                idempotency_key: targeted_key(UNDERSPEAKING, author, last_seq),
                trigger_seq: t.tail_seq(),
            });
        }
        Ok(out)
    }
}
