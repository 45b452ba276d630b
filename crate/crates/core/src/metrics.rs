//! Expected-behavior measures computed from a finished transcript.
//!
//! Response windows count human messages only. An underspeaking notice is
//! answered when its target speaks within the next five human messages; an
//! overspeaking notice is answered when the next five human messages contain
//! nothing from its target. Outcomes whose window runs past the end of the
//! transcript without settling are undetermined and left out of the rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::features::{notice_target, INFORMATION, OVERSPEAKING, TIMING, UNDERSPEAKING};
use crate::transcript::{AuthorId, Message, Transcript};

pub const RESPONSE_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InterventionOutcome {
    pub intervention: Message,
    pub target: Option<AuthorId>,
    /// False when the transcript ended before the criterion could settle.
    pub determined: bool,
    pub responded: bool,
    /// Human messages until the criterion was met.
    pub response_lag_msgs: Option<usize>,
}

/// Proxy for the information rule: how many of the five messages after a
/// link post came from humans. Says nothing about whether the link was used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InformationFollowup {
    pub intervention: Message,
    pub human_messages_in_next_5: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub human_messages: usize,
    pub agent_messages: usize,
    pub feature_counts: BTreeMap<String, usize>,
    pub author_message_counts: BTreeMap<AuthorId, usize>,
    pub underspeak_response_rate: Option<f64>,
    pub overspeak_response_rate: Option<f64>,
    pub outcomes: Vec<InterventionOutcome>,
    pub information_followup_proxy: Vec<InformationFollowup>,
}

fn notices<'t>(
    transcript: &'t Transcript,
    tag: &'static str,
) -> impl Iterator<Item = (&'t Message, AuthorId)> + 't {
    transcript.agent_messages().filter_map(move |m| {
        let target = AuthorId::new(notice_target(m, tag)?).ok()?;
        Some((m, target))
    })
}

fn following_humans<'t>(transcript: &'t Transcript, notice: &Message) -> Vec<&'t Message> {
    transcript.messages()[notice.seq as usize + 1..]
        .iter()
        .filter(|m| m.is_human())
        .take(RESPONSE_WINDOW)
        .collect()
}

pub fn underspeak_outcomes(transcript: &Transcript) -> Vec<InterventionOutcome> {
    notices(transcript, UNDERSPEAKING)
        .map(|(notice, target)| {
            let next = following_humans(transcript, notice);
            let spoke = next.iter().position(|m| m.author == target);
            InterventionOutcome {
                intervention: notice.clone(),
                determined: spoke.is_some() || next.len() == RESPONSE_WINDOW,
                responded: spoke.is_some(),
                response_lag_msgs: spoke.map(|p| p + 1),
                target: Some(target),
            }
        })
        .collect()
}

pub fn overspeak_outcomes(transcript: &Transcript) -> Vec<InterventionOutcome> {
    notices(transcript, OVERSPEAKING)
        .map(|(notice, target)| {
            let next = following_humans(transcript, notice);
            let spoke = next.iter().any(|m| m.author == target);
            let full = next.len() == RESPONSE_WINDOW;
            let responded = !spoke && full;
            InterventionOutcome {
                intervention: notice.clone(),
                determined: spoke || full,
                responded,
                response_lag_msgs: responded.then_some(RESPONSE_WINDOW),
                target: Some(target),
            }
        })
        .collect()
}

fn response_rate(outcomes: &[InterventionOutcome]) -> Option<f64> {
    let determined = outcomes.iter().filter(|o| o.determined).count();
    if determined == 0 {
        return None;
    }
    let responded = outcomes
        .iter()
        .filter(|o| o.determined && o.responded)
        .count();
    Some(responded as f64 / determined as f64)
}

pub fn information_followups(transcript: &Transcript) -> Vec<InformationFollowup> {
    transcript
        .agent_messages()
        .filter(|m| m.feature_tag.as_deref() == Some(INFORMATION))
        .map(|m| InformationFollowup {
            intervention: m.clone(),
            human_messages_in_next_5: transcript.messages()[m.seq as usize + 1..]
                .iter()
                .take(RESPONSE_WINDOW)
                .filter(|n| n.is_human())
                .count(),
        })
        .collect()
}

pub fn session_report(transcript: &Transcript) -> SessionReport {
    let mut feature_counts: BTreeMap<String, usize> =
        [INFORMATION, TIMING, UNDERSPEAKING, OVERSPEAKING]
            .into_iter()
            .map(|t| (t.to_string(), 0))
            .collect();
    for m in transcript.agent_messages() {
        let tag = m.feature_tag.clone().unwrap_or_default();
        *feature_counts.entry(tag).or_insert(0) += 1;
    }
    let mut author_message_counts = BTreeMap::new();
    for m in transcript.humans() {
        *author_message_counts.entry(m.author.clone()).or_insert(0) += 1;
    }

    let under = underspeak_outcomes(transcript);
    let over = overspeak_outcomes(transcript);
    let underspeak_response_rate = response_rate(&under);
    let overspeak_response_rate = response_rate(&over);
    let mut outcomes: Vec<_> = under.into_iter().chain(over).collect();
    outcomes.sort_by_key(|o| o.intervention.seq);

    SessionReport {
        human_messages: transcript.humans().count(),
        agent_messages: transcript.agent_messages().count(),
        feature_counts,
        author_message_counts,
        underspeak_response_rate,
        overspeak_response_rate,
        outcomes,
        information_followup_proxy: information_followups(transcript),
    }
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"))
}

impl SessionReport {
    /// Aligned plain-text rendering for terminals.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("human messages".into(), self.human_messages.to_string()),
            ("agent messages".into(), self.agent_messages.to_string()),
        ];
        for (tag, n) in &self.feature_counts {
            rows.push((format!("interventions: {tag}"), n.to_string()));
        }
        rows.push((
            "underspeak response rate".into(),
            fmt_rate(self.underspeak_response_rate),
        ));
        rows.push((
            "overspeak response rate".into(),
            fmt_rate(self.overspeak_response_rate),
        ));
        for (author, n) in &self.author_message_counts {
            rows.push((format!("messages: {author}"), n.to_string()));
        }
        for o in &self.outcomes {
            let state = match (o.determined, o.responded) {
                (false, _) => "undetermined".to_string(),
                (true, true) => match o.response_lag_msgs {
                    Some(lag) => format!("responded (lag {lag})"),
                    None => "responded".to_string(),
                },
                (true, false) => "no response".to_string(),
            };
            let target = o.target.as_ref().map_or("-", |a| a.as_str());
            let tag = o.intervention.feature_tag.as_deref().unwrap_or("-");
            rows.push((
                format!("seq {} {tag} -> {target}", o.intervention.seq),
                state,
            ));
        }
        for f in &self.information_followup_proxy {
            rows.push((
                format!("seq {} information (proxy)", f.intervention.seq),
                format!("{} human of next 5", f.human_messages_in_next_5),
            ));
        }
        let width = rows
            .iter()
            .map(|(k, _)| k.chars().count())
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}
