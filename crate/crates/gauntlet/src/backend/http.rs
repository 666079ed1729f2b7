//! Live OpenAI-compatible chat-completions client.
//!
//! Retries transport failures and rate-limit/server responses with
//! exponential backoff; provider content errors are surfaced immediately
//! since they are deterministic.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{AgentRequest, AgentResponse, Provenance, Provider, TokenUsage};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "GAUNTLET_API_KEY";

pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    model_id: String,
    retry_limit: u32,
    backoff_base: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

impl HttpProvider {
    pub fn new(base_url: String, model_id: String, retry_limit: u32, backoff_base: Duration) -> Self {
        HttpProvider {
            client: reqwest::blocking::Client::new(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model_id,
            retry_limit,
            backoff_base,
        }
    }

    fn attempt(&self, request: &AgentRequest) -> std::result::Result<AgentResponse, Attempt> {
        let started = Instant::now();
        let body = json!({
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        });
        let mut builder = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| Attempt::Transient(format!("transport: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| Attempt::Transient(format!("body read: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::Provider(format!("status {status}: {text}"))));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(Error::Provider(format!("malformed payload: {e}"))))?;
        let content = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Attempt::Fatal(Error::Provider("empty completion".into())))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(AgentResponse {
            text: content,
            model_id: parsed.model.unwrap_or_else(|| self.model_id.clone()),
            latency_ms: started.elapsed().as_millis() as u64,
            token_usage: TokenUsage {
                input: usage.prompt_tokens,
                output: usage.completion_tokens,
            },
            provenance: Provenance::Live,
        })
    }
}

enum Attempt {
    Transient(String),
    Fatal(Error),
}

impl Provider for HttpProvider {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse> {
        let mut last = String::new();
        for attempt in 0..=self.retry_limit {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(Attempt::Fatal(err)) => return Err(err),
                Err(Attempt::Transient(reason)) => {
                    last = reason;
                    if attempt < self.retry_limit {
                        std::thread::sleep(self.backoff_base * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(Error::BackendUnavailable {
            attempts: self.retry_limit + 1,
            reason: last,
        })
    }
}
