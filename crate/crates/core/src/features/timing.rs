use serde::{Deserialize, Serialize};

use super::{Validate, TIMING};
use crate::engine::{EvalContext, Feature, FeatureError, Intervention, SessionConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    #[serde(default = "default_warnings")]
    pub warnings_min: Vec<u32>,
}

fn default_warnings() -> Vec<u32> {
    vec![10, 5, 2]
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            warnings_min: default_warnings(),
        }
    }
}

impl Validate for TimingConfig {
    fn validate(&self, session: &SessionConfig) -> Result<(), String> {
        if self.warnings_min.contains(&0) {
            return Err("warnings_min entries must be positive".into());
        }
        if self.warnings_min.windows(2).any(|w| w[0] <= w[1]) {
            return Err("warnings_min must be strictly decreasing".into());
        }
        if let (Some(duration), Some(&first)) = (session.duration_min, self.warnings_min.first()) {
            if first >= duration {
                return Err(format!(
                    "warning at {first} minutes is not inside the {duration}-minute session"
                ));
            }
        }
        Ok(())
    }
}

/// Announces remaining session time as each warning threshold is crossed.
///
/// The session starts at `session.start_ms`, or at the first human message
/// when unset. After a long poll gap only the most recently crossed warning
/// is produced; earlier ones are skipped as stale.
#[derive(Debug, Clone)]
pub struct Timing {
    config: TimingConfig,
}

impl Timing {
    pub fn new(config: TimingConfig) -> Self {
        Self { config }
    }
}

impl Feature for Timing {
    fn name(&self) -> &str {
        TIMING
    }

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Vec<Intervention>, FeatureError> {
        let t = ctx.transcript;
        let Some(duration) = ctx.session.duration_ms() else {
            return Ok(Vec::new());
        };
        let Some(first_human) = t.humans().next() else {
            return Ok(Vec::new());
        };
        let start = ctx.session.start_ms.unwrap_or(first_human.ts_ms);
        let remaining = start + duration - ctx.now;
        if remaining <= 0 {
            return Ok(Vec::new());
        }
        let current = self
            .config
            .warnings_min
            .iter()
            .copied()
            .filter(|&w| remaining <= i64::from(w) * 60_000)
            .min();
        Ok(current
            .map(|w| Intervention {
                body: format!("{w} minutes remaining."),
                feature_tag: TIMING.into(),
                idempotency_key: format!("{TIMING}:{w}"),
                trigger_seq: t.tail_seq(),
            })
            .into_iter()
            .collect())
    }
}
