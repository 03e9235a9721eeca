//! Answer generation: a deterministic template, or an external
//! chat-completion endpoint.

use std::fmt::Write as _;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{LlmConfig, LlmProvider};
use crate::pipeline::RankedObject;

pub const API_KEY_VAR: &str = "MQA_LLM_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("LLM unavailable: {0}")]
    Unavailable(String),
}

/// Fixed rendering listing ids and distances in rank order.
pub fn template_answer(query: &str, results: &[RankedObject]) -> String {
    if results.is_empty() {
        return format!("No results found for: {query}");
    }
    let mut out = format!("Found {} results for: {query}", results.len());
    for r in results {
        let _ = write!(out, "\n{}. {} (distance {:.4})", r.rank, r.id, r.distance);
    }
    out
}

/// The second message sent to the LLM: one line per result.
pub fn result_summary(results: &[RankedObject]) -> String {
    if results.is_empty() {
        return "Retrieved results: none.".into();
    }
    let mut out = String::from("Retrieved results, best first:");
    for r in results {
        let _ = write!(
            out,
            "\n{}. id={} distance={:.4} modalities={}",
            r.rank,
            r.id,
            r.distance,
            r.modalities.join(",")
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    config: LlmConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Self { config, agent }
    }

    pub fn provider(&self) -> LlmProvider {
        self.config.provider
    }

    pub fn describe(&self) -> String {
        match self.config.provider {
            LlmProvider::Template => "llm: template".into(),
            LlmProvider::External => format!(
                "llm: external, model {} at {}, temperature {}",
                self.config.model,
                self.config.endpoint.as_deref().unwrap_or(""),
                self.config.temperature
            ),
        }
    }

    /// The request body sent to an external endpoint. `results` is `None`
    /// when there is no retrieval (LLM-only mode).
    pub fn request_body(&self, query: &str, results: Option<&[RankedObject]>) -> Value {
        let mut messages = vec![json!({"role": "user", "content": query})];
        if let Some(results) = results {
            messages.push(json!({"role": "user", "content": result_summary(results)}));
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        })
    }

    pub fn generate_answer(&self, query: &str, results: Option<&[RankedObject]>) -> Result<String, LlmError> {
        match self.config.provider {
            LlmProvider::Template => Ok(template_answer(query, results.unwrap_or(&[]))),
            LlmProvider::External => self.complete(query, results),
        }
    }

    fn complete(&self, query: &str, results: Option<&[RankedObject]>) -> Result<String, LlmError> {
        let endpoint = self
            .config
            .endpoint
            .as_deref()
            .ok_or_else(|| LlmError::Unavailable("no endpoint configured".into()))?;
        let mut request = self.agent.post(endpoint);
        if let Ok(key) = std::env::var(API_KEY_VAR) {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = request
            .send_json(self.request_body(query, results))
            .map_err(|e| LlmError::Unavailable(redact(e)))?;
        let body: Completion = response
            .into_json()
            .map_err(|e| LlmError::Unavailable(format!("malformed response: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Unavailable("response has no choices".into()))
    }
}

fn redact(e: ureq::Error) -> String {
    match e {
        ureq::Error::Status(code, _) => format!("endpoint returned status {code}"),
        ureq::Error::Transport(t) => format!("transport error: {}", t.kind()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(n: usize) -> Vec<RankedObject> {
        (0..n)
            .map(|i| RankedObject {
                rank: i + 1,
                id: format!("o{i}"),
                distance: i as f32 * 0.5,
                modalities: vec!["text".into()],
            })
            .collect()
    }

    #[test]
    fn template_lists_results_in_rank_order() {
        let a = template_answer("red shoes", &ranked(3));
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], "Found 3 results for: red shoes");
        assert_eq!(&lines[1..], ["1. o0 (distance 0.0000)", "2. o1 (distance 0.5000)", "3. o2 (distance 1.0000)"]);
        assert_eq!(template_answer("x", &[]), "No results found for: x");
    }

    #[test]
    fn request_body_has_query_then_results() {
        let client = LlmClient::new(LlmConfig {
            provider: LlmProvider::External,
            endpoint: Some("http://127.0.0.1:9".into()),
            ..LlmConfig::default()
        });
        let body = client.request_body("q", Some(&ranked(2)));
        assert_eq!(body["messages"][0]["content"], "q");
        assert!(body["messages"][1]["content"].as_str().unwrap().contains("id=o1"));
        assert_eq!(body["temperature"], 0.2);
        assert_eq!(body["model"], "gpt-4o-mini");
        assert_eq!(client.request_body("q", None)["messages"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn dead_endpoint_is_unavailable() {
        let client = LlmClient::new(LlmConfig {
            provider: LlmProvider::External,
            endpoint: Some("http://127.0.0.1:9/v1/chat/completions".into()),
            timeout_ms: 2000,
            ..LlmConfig::default()
        });
        assert!(matches!(client.generate_answer("q", Some(&[])), Err(LlmError::Unavailable(_))));
    }
}
