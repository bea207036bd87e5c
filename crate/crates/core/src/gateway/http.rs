//! OpenAI-compatible chat-completion and embedding client.
//!
//! Requests go to `{endpoint}/chat/completions` and `{endpoint}/embeddings`.
//! The API key, when set, comes from `SEQMEM_API_KEY`. Token counts are taken
//! from the response's `usage` object.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

use super::{EmbeddingVector, Embedder, GenerationRequest, GenerationResult, Generator, Reasoning};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "SEQMEM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

pub struct HttpClient {
    settings: HttpSettings,
    agent: Agent,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("endpoint", &self.settings.endpoint)
            .field("model", &self.settings.model)
            .finish_non_exhaustive()
    }
}

impl HttpClient {
    /// Falls back to `SEQMEM_API_KEY` when the settings carry no key.
    pub fn new(mut settings: HttpSettings) -> Self {
        if settings.api_key.is_none() {
            settings.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        let agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpClient { settings, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.endpoint.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let mut req = self.agent.post(&self.url(path)).header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Error::gateway(format!("POST {path}: {e}"), true))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::gateway(format!("reading {path} response: {e}"), true))?;
        if status == 429 || status >= 500 {
            return Err(Error::gateway(format!("{path} returned {status}: {text}"), true));
        }
        if status >= 400 {
            return Err(Error::gateway(format!("{path} returned {status}: {text}"), false));
        }
        serde_json::from_str(&text).map_err(|e| Error::gateway(format!("{path} response: {e}"), false))
    }

    pub fn chat_body(&self, request: &GenerationRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": request.user_text}));
        let mut body = json!({
            "model": self.settings.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        match request.reasoning {
            Reasoning::Off => {}
            Reasoning::Low => body["reasoning"] = json!({"effort": "low"}),
            Reasoning::On => body["reasoning"] = json!({"enabled": true}),
        }
        body
    }
}

impl Generator for HttpClient {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult> {
        let started = Instant::now();
        let value = self.post("chat/completions", &self.chat_body(request))?;
        let resp: ChatResponse = serde_json::from_value(value)
            .map_err(|e| Error::gateway(format!("malformed chat response: {e}"), false))?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let usage = resp.usage.unwrap_or_default();
        Ok(GenerationResult {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency: started.elapsed().as_millis() as u64,
        })
    }

    fn is_remote(&self) -> bool {
        true
    }
}

/// Remote embeddings. The dimension is fixed at construction; a response of
/// any other length is rejected by the gateway.
#[derive(Debug)]
pub struct HttpEmbedder {
    client: HttpClient,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings, dimension: usize) -> Self {
        HttpEmbedder {
            client: HttpClient::new(settings),
            dimension,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let body = json!({"model": self.client.settings.model, "input": text});
        let value = self.client.post("embeddings", &body)?;
        let resp: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| Error::gateway(format!("malformed embedding response: {e}"), false))?;
        let datum = resp
            .data
            .into_iter()
            .next()
            .ok_or_else(|| Error::gateway("embedding response without data", false))?;
        EmbeddingVector::new(datum.embedding)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn is_remote(&self) -> bool {
        true
    }
}
