//! [`ChatAdapter`] over the chat service's HTTP protocol.

use std::time::Duration;

use facilitator_core::{AdapterError, AuthorId, ChatAdapter, Intervention, Message, Transcript};
use serde_json::json;
use ureq::Agent;

pub struct HttpAdapter {
    http: Agent,
    messages_url: String,
    agent_author: AuthorId,
}

impl HttpAdapter {
    pub fn new(service: &str, room: &str, agent_author: AuthorId) -> Self {
        let http = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        Self {
            http,
            messages_url: format!("{}/rooms/{}/messages", service.trim_end_matches('/'), room),
            agent_author,
        }
    }

    fn check(mut resp: ureq::http::Response<ureq::Body>) -> Result<ureq::Body, AdapterError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.into_body());
        }
        let detail = resp.body_mut().read_to_string().unwrap_or_default();
        Err(AdapterError::Rejected(format!("{status}: {detail}")))
    }
}

fn transport(e: ureq::Error) -> AdapterError {
    AdapterError::Transport(e.to_string())
}

impl ChatAdapter for HttpAdapter {
    fn fetch_transcript(&mut self) -> Result<Transcript, AdapterError> {
        let resp = self
            .http
            .get(&self.messages_url)
            .query("after_seq", "-1")
            .call()
            .map_err(transport)?;
        let messages: Vec<Message> = Self::check(resp)?
            .read_json()
            .map_err(|e| AdapterError::InvalidData(e.to_string()))?;
        Transcript::from_messages(Some(self.agent_author.clone()), messages)
            .map_err(|e| AdapterError::InvalidData(e.to_string()))
    }

    fn post_interventions(
        &mut self,
        interventions: &[Intervention],
    ) -> Result<Vec<Message>, AdapterError> {
        interventions
            .iter()
            .map(|i| {
                let resp = self
                    .http
                    .post(&self.messages_url)
                    .send_json(json!({
                        "author": self.agent_author,
                        "body": i.body,
                        "origin": "agent",
                        "feature_tag": i.feature_tag,
                        "idempotency_key": i.idempotency_key,
                    }))
                    .map_err(transport)?;
                Self::check(resp)?
                    .read_json()
                    .map_err(|e| AdapterError::InvalidData(e.to_string()))
            })
            .collect()
    }
}
