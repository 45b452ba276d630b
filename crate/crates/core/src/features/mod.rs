//! The built-in facilitation rules.
//!
//! Each rule is a stateless [`Feature`](crate::engine::Feature). Agent
//! messages never count toward any message window; rules find their own
//! past notices through the tag and idempotency key stored on agent
//! messages in the transcript.

mod information;
mod overspeaking;
mod timing;
mod underspeaking;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::engine::{Feature, FeatureRegistry, SessionConfig};
use crate::transcript::{AuthorId, Message};

pub use information::{Information, InformationConfig, Link};
pub use overspeaking::{Overspeaking, OverspeakingConfig};
pub use timing::{Timing, TimingConfig};
pub use underspeaking::{Underspeaking, UnderspeakingConfig};

pub const INFORMATION: &str = "information";
pub const TIMING: &str = "timing";
pub const UNDERSPEAKING: &str = "underspeaking";
pub const OVERSPEAKING: &str = "overspeaking";

pub(crate) fn register_builtins(registry: &mut FeatureRegistry) {
    registry.register(INFORMATION, |block, session| {
        build::<InformationConfig, _>(block, session, Information::new)
    });
    registry.register(TIMING, |block, session| {
        build::<TimingConfig, _>(block, session, Timing::new)
    });
    registry.register(UNDERSPEAKING, |block, session| {
        build::<UnderspeakingConfig, _>(block, session, Underspeaking::new)
    });
    registry.register(OVERSPEAKING, |block, session| {
        build::<OverspeakingConfig, _>(block, session, Overspeaking::new)
    });
}

pub(crate) trait Validate {
    fn validate(&self, session: &SessionConfig) -> Result<(), String>;
}

fn build<C, F>(
    block: &Value,
    session: &SessionConfig,
    make: impl FnOnce(C) -> F,
) -> Result<Box<dyn Feature>, String>
where
    C: DeserializeOwned + Validate,
    F: Feature + 'static,
{
    let config: C = serde_json::from_value(block.clone()).map_err(|e| e.to_string())?;
    config.validate(session)?;
    Ok(Box::new(make(config)))
}

/// Key for a notice addressed to one author: `<tag>:<author>:<seq>`.
pub fn targeted_key(tag: &str, author: &AuthorId, seq: u64) -> String {
    format!("{tag}:{author}:{seq}")
}

/// Splits a targeted key back into author and seq. Author ids may contain
/// `:`; the seq is always the last segment.
pub fn parse_targeted_key<'k>(tag: &str, key: &'k str) -> Option<(&'k str, u64)> {
    let rest = key.strip_prefix(tag)?.strip_prefix(':')?;
    let (author, seq) = rest.rsplit_once(':')?;
    if author.is_empty() {
        return None;
    }
    Some((author, seq.parse().ok()?))
}

/// Author addressed by an agent notice carrying `tag`, if any.
pub fn notice_target<'m>(message: &'m Message, tag: &str) -> Option<&'m str> {
    if !message.is_agent() || message.feature_tag.as_deref() != Some(tag) {
        return None;
    }
    parse_targeted_key(tag, message.idempotency_key.as_deref()?).map(|(a, _)| a)
}
