//! Brute-force reference implementations of the built-in rules and a
//! random session generator. Written against the canonical message records
//! only; nothing here calls into the feature implementations.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use facilitator_core::{
    dedupe, AuthorId, Draft, Engine, FeatureRegistry, Message, Origin, Transcript,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone)]
pub struct RuleParams {
    pub agent: String,
    pub lull_seconds: u64,
    pub n_links: usize,
    pub warnings_min: Vec<u32>,
    pub start_ms: Option<i64>,
    pub duration_min: Option<u32>,
    pub under_window: usize,
    pub over_window: usize,
    pub over_threshold: f64,
}

impl RuleParams {
    /// The study defaults with five links and a 20-minute session.
    pub fn study() -> Self {
        Self {
            agent: "bot".into(),
            lull_seconds: 120,
            n_links: 5,
            warnings_min: vec![10, 5, 2],
            start_ms: None,
            duration_min: Some(20),
            under_window: 8,
            over_window: 8,
            over_threshold: 0.5,
        }
    }

    pub fn config_json(&self) -> String {
        let links: Vec<_> = (0..self.n_links)
            .map(|i| serde_json::json!({"url": format!("https://example.org/r{i}"), "note": format!("resource {i}")}))
            .collect();
        serde_json::json!({
            "agent_author": self.agent,
            "session": {"start_ms": self.start_ms, "duration_min": self.duration_min},
            "features": {
                "information": {"lull_seconds": self.lull_seconds, "links": links},
                "timing": {"warnings_min": self.warnings_min},
                "underspeaking": {"window": self.under_window},
                "overspeaking": {"window": self.over_window, "share_threshold": self.over_threshold}
            }
        })
        .to_string()
    }

    pub fn engine(&self) -> Engine {
        Engine::from_json(&self.config_json(), &FeatureRegistry::with_builtins()).unwrap()
    }
}

fn is_agent(m: &Message) -> bool {
    m.origin == Origin::Agent
}

fn tagged(m: &Message, tag: &str) -> bool {
    is_agent(m) && m.feature_tag.as_deref() == Some(tag)
}

/// True iff `key` is `<tag>:<author>:<digits>` for exactly this author.
fn key_addresses(key: &str, tag: &str, author: &str) -> bool {
    let prefix = format!("{tag}:{author}:");
    match key.strip_prefix(&prefix) {
        Some(rest) => !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()),
        None => false,
    }
}

pub fn oracle_information(msgs: &[Message], now: i64, p: &RuleParams) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let any_human = msgs.iter().any(|m| !is_agent(m));
    if !any_human {
        return out;
    }
    let last_ts = msgs[msgs.len() - 1].ts_ms;
    let gap = now - last_ts;
    let mut used = 0;
    for m in msgs {
        if tagged(m, "information") {
            used += 1;
        }
    }
    if gap >= p.lull_seconds as i64 * 1000 && used < p.n_links {
        out.insert(format!("information:{used}"));
    }
    out
}

pub fn oracle_timing(msgs: &[Message], now: i64, p: &RuleParams) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let Some(duration) = p.duration_min else {
        return out;
    };
    let Some(first) = msgs.iter().find(|m| !is_agent(m)) else {
        return out;
    };
    let start = p.start_ms.unwrap_or(first.ts_ms);
    let end = start + duration as i64 * 60_000;
    if now >= end {
        return out;
    }
    // Crossing time of each warning; report the one crossed most recently.
    let mut latest: Option<(i64, u32)> = None;
    for &w in &p.warnings_min {
        let crossed_at = end - w as i64 * 60_000;
        if now >= crossed_at && latest.is_none_or(|(t, _)| crossed_at > t) {
            latest = Some((crossed_at, w));
        }
    }
    if let Some((_, w)) = latest {
        out.insert(format!("timing:{w}"));
    }
    out
}

pub fn oracle_underspeaking(msgs: &[Message], p: &RuleParams) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let authors: BTreeSet<&str> = msgs
        .iter()
        .filter(|m| !is_agent(m))
        .map(|m| m.author.as_str())
        .collect();
    for a in authors {
        let mut last = 0;
        for (i, m) in msgs.iter().enumerate() {
            if !is_agent(m) && m.author.as_str() == a {
                last = i;
            }
        }
        let mut others = 0;
        let mut notified = false;
        for m in &msgs[last + 1..] {
            if is_agent(m) {
                if tagged(m, "underspeaking")
                    && key_addresses(
                        m.idempotency_key.as_deref().unwrap_or(""),
                        "underspeaking",
                        a,
                    )
                {
                    notified = true;
                }
            } else {
                others += 1;
            }
        }
        if others >= p.under_window && !notified {
            out.insert(format!("underspeaking:{a}:{}", msgs[last].seq));
        }
    }
    out
}

pub fn oracle_overspeaking(msgs: &[Message], p: &RuleParams) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let humans: Vec<usize> = (0..msgs.len()).filter(|&i| !is_agent(&msgs[i])).collect();
    if humans.len() < p.over_window {
        return out;
    }
    let window = &humans[humans.len() - p.over_window..];
    let first = window[0];
    let last = window[window.len() - 1];
    for &i in window {
        let a = msgs[i].author.as_str();
        let count = window
            .iter()
            .filter(|&&j| msgs[j].author.as_str() == a)
            .count();
        if count as f64 / p.over_window as f64 <= p.over_threshold {
            continue;
        }
        let in_force = msgs[first..].iter().any(|m| {
            tagged(m, "overspeaking")
                && key_addresses(
                    m.idempotency_key.as_deref().unwrap_or(""),
                    "overspeaking",
                    a,
                )
        });
        if !in_force {
            out.insert(format!("overspeaking:{a}:{}", msgs[last].seq));
        }
    }
    out
}

/// All four oracles, keyed by feature tag.
pub fn oracle_all(
    msgs: &[Message],
    now: i64,
    p: &RuleParams,
) -> BTreeMap<&'static str, BTreeSet<String>> {
    BTreeMap::from([
        ("information", oracle_information(msgs, now, p)),
        ("timing", oracle_timing(msgs, now, p)),
        ("underspeaking", oracle_underspeaking(msgs, p)),
        ("overspeaking", oracle_overspeaking(msgs, p)),
    ])
}

/// Engine output for the same snapshot, grouped the same way.
pub fn engine_all(
    engine: &Engine,
    t: &Transcript,
    now: i64,
) -> BTreeMap<&'static str, BTreeSet<String>> {
    let mut out: BTreeMap<&'static str, BTreeSet<String>> =
        ["information", "timing", "underspeaking", "overspeaking"]
            .into_iter()
            .map(|k| (k, BTreeSet::new()))
            .collect();
    let eval = engine.evaluate_all(t, now);
    assert!(eval.failures.is_empty());
    for i in eval.interventions {
        let slot = out
            .get_mut(i.feature_tag.as_str())
            .unwrap_or_else(|| panic!("unexpected tag {}", i.feature_tag));
        slot.insert(i.idempotency_key);
    }
    out
}

pub fn random_params(rng: &mut StdRng) -> RuleParams {
    let mut warnings: Vec<u32> = (1..10).filter(|_| rng.random_bool(0.3)).collect();
    warnings.sort_unstable_by(|a, b| b.cmp(a));
    RuleParams {
        agent: "bot".into(),
        lull_seconds: rng.random_range(10..=180),
        n_links: rng.random_range(0..=5),
        warnings_min: warnings,
        start_ms: rng.random_bool(0.5).then(|| rng.random_range(0..60_000)),
        duration_min: rng.random_bool(0.85).then(|| rng.random_range(10..=25)),
        under_window: rng.random_range(1..=10),
        over_window: rng.random_range(2..=10),
        over_threshold: [0.3, 0.4, 0.5, 0.6, 2.0 / 3.0][rng.random_range(0..5)],
    }
}

/// One poll observation: the transcript the agent saw and the poll time.
pub struct Observation {
    pub transcript: Transcript,
    pub now: i64,
}

/// Simulates a session of up to `max_messages` human messages from up to
/// six authors with random gaps (including ties), polling the engine at
/// random ticks and posting its deduplicated output. Every poll snapshot is
/// returned for comparison.
pub fn simulate(rng: &mut StdRng, p: &RuleParams, max_messages: usize) -> Vec<Observation> {
    let engine = p.engine();
    let agent = AuthorId::new(p.agent.clone()).unwrap();
    let n_authors = rng.random_range(1..=6);
    let authors: Vec<AuthorId> = (0..n_authors)
        .map(|i| AuthorId::new(format!("p{i}")).unwrap())
        .collect();
    // Skewed speaking weights so over- and underspeaking both occur.
    let weights: Vec<u32> = (0..n_authors).map(|_| rng.random_range(1..=10)).collect();
    let total: u32 = weights.iter().sum();
    let n_msgs = rng.random_range(0..=max_messages);
    let poll_ms = [500, 1000, 2000, 5000][rng.random_range(0..4)];

    let mut t = Transcript::new(Some(agent.clone()));
    let mut now: i64 = 0;
    let mut obs = Vec::new();
    let poll = |t: &mut Transcript, now: i64, obs: &mut Vec<Observation>| {
        obs.push(Observation {
            transcript: t.clone(),
            now,
        });
        let fresh = dedupe(engine.evaluate_all(t, now).interventions, t);
        let mut next = std::mem::take(t);
        for i in fresh {
            // Total length stays within the message budget of the generator.
            if next.len() >= max_messages {
                break;
            }
            next = next.append(i.to_draft(&agent), now).unwrap();
        }
        *t = next;
    };
    for _ in 0..n_msgs {
        let gap = match rng.random_range(0..10) {
            0 => 0,
            1 => rng.random_range(100_000..250_000),
            _ => rng.random_range(0..30_000),
        };
        let target = now + gap;
        // Poll ticks falling inside the gap.
        // Poll a few random ticks inside the gap plus the last one before
        // the next message.
        let first_tick = now / poll_ms + 1;
        let last_tick = (target - 1).div_euclid(poll_ms);
        if last_tick >= first_tick {
            let mut ticks = vec![last_tick];
            for _ in 0..rng.random_range(0..=3) {
                ticks.push(rng.random_range(first_tick..=last_tick));
            }
            ticks.sort_unstable();
            ticks.dedup();
            for tick in ticks {
                poll(&mut t, tick * poll_ms, &mut obs);
            }
        }
        now = target;
        if t.len() >= max_messages {
            break;
        }
        let mut pick = rng.random_range(0..total);
        let mut who = 0;
        while pick >= weights[who] {
            pick -= weights[who];
            who += 1;
        }
        let body = format!("msg {}", t.len());
        t = t
            .append(Draft::human(authors[who].clone(), body), now)
            .unwrap();
        if rng.random_bool(0.5) {
            poll(&mut t, now, &mut obs);
        }
    }
    for _ in 0..4 {
        now += rng.random_range(30_000..200_000);
        poll(&mut t, now, &mut obs);
    }
    obs
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Virtual time at which the condition behind an agent post first held,
/// derived from the transcript alone.
pub fn condition_time(msgs: &[Message], post: &Message, p: &RuleParams) -> i64 {
    let key = post.idempotency_key.as_deref().unwrap();
    let before = &msgs[..post.seq as usize];
    match post.feature_tag.as_deref().unwrap() {
        "information" => before.last().unwrap().ts_ms + p.lull_seconds as i64 * 1000,
        "timing" => {
            let w: i64 = key.strip_prefix("timing:").unwrap().parse().unwrap();
            let first = before.iter().find(|m| !is_agent(m)).unwrap().ts_ms;
            let start = p.start_ms.unwrap_or(first);
            // The session clock starts with the first human message when unset.
            (start + p.duration_min.unwrap() as i64 * 60_000 - w * 60_000).max(first)
        }
        "underspeaking" => {
            let last: usize = key.rsplit(':').next().unwrap().parse().unwrap();
            before[last + 1..]
                .iter()
                .filter(|m| !is_agent(m))
                .nth(p.under_window - 1)
                .unwrap()
                .ts_ms
        }
        "overspeaking" => {
            let last: usize = key.rsplit(':').next().unwrap().parse().unwrap();
            msgs[last].ts_ms
        }
        other => panic!("unknown tag {other}"),
    }
}

/// Posts made later than one poll interval after their condition held.
pub fn liveness_violations(msgs: &[Message], p: &RuleParams, poll_ms: i64) -> Vec<String> {
    msgs.iter()
        .filter(|m| is_agent(m))
        .filter_map(|post| {
            let cond = condition_time(msgs, post, p);
            let lag = post.ts_ms - cond;
            (!(0..=poll_ms).contains(&lag)).then(|| {
                format!(
                    "{} posted at {} but held since {cond}",
                    post.idempotency_key.as_deref().unwrap(),
                    post.ts_ms
                )
            })
        })
        .collect()
}

pub fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
