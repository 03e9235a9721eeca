//! HTTP client for encoders hosted outside the process.
//!
//! Protocol: `POST {endpoint}/encode` with `{"modality": name, "payload": …}`,
//! answered by `{"vector": [...]}`. Text payloads are sent as a string,
//! vectors as an array and binary content as `{"bytes_base64": "..."}`.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::EncoderInput;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct ExternalEncoder {
    url: String,
    agent: ureq::Agent,
    limiter: Arc<Limiter>,
}

impl std::fmt::Debug for ExternalEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEncoder").field("url", &self.url).finish()
    }
}

#[derive(Deserialize)]
struct EncodeResponse {
    vector: Vec<f32>,
}

impl ExternalEncoder {
    pub fn new(endpoint: &str, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            url: format!("{}/encode", endpoint.trim_end_matches('/')),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            limiter: Arc::new(Limiter::new(max_in_flight)),
        }
    }

    pub fn encode(&self, modality: &str, input: EncoderInput<'_>, dim: usize) -> Result<Vec<f32>> {
        let payload = match input {
            EncoderInput::Text(t) => Value::String(t.to_string()),
            EncoderInput::Vector(v) => json!(v),
            EncoderInput::Bytes(b) => {
                json!({ "bytes_base64": base64::engine::general_purpose::STANDARD.encode(b) })
            }
        };
        let _permit = self.limiter.acquire();
        let response = self
            .agent
            .post(&self.url)
            .send_json(json!({ "modality": modality, "payload": payload }))
            .map_err(|e| Error::EncoderUnavailable(format!("{}: {e}", self.url)))?;
        let body: EncodeResponse = response
            .into_json()
            .map_err(|e| Error::EncoderUnavailable(format!("{}: bad response: {e}", self.url)))?;
        if body.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: body.vector.len(),
            });
        }
        Ok(body.vector)
    }
}
