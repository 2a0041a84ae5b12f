//! HTTP backend for OpenAI-compatible `/chat/completions` and `/embeddings`
//! endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{estimate_tokens, Backend, Completion, CompletionRequest, EmbeddingBatch, TransportError, TransportKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "REDBENCH_API_KEY".into(),
            timeout_secs: 120,
            temperature: 0.0,
        }
    }
}

pub struct ProviderBackend {
    config: ProviderConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for ProviderBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderBackend").field("base_url", &self.config.base_url).finish_non_exhaustive()
    }
}

impl ProviderBackend {
    /// Reads the API key from the configured environment variable; a missing
    /// key is a credentials error.
    pub fn from_env(config: ProviderConfig) -> Result<Self, TransportError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            TransportError::new(
                TransportKind::Credentials(config.api_key_env.clone()),
                format!("environment variable {} is not set", config.api_key_env),
            )
        })?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: ProviderConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, api_key, agent }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(transport_error)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport_error)?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| TransportError::new(TransportKind::Server(status), format!("invalid response body: {e}"))),
            429 => Err(TransportError::new(TransportKind::RateLimited, text)),
            401 | 403 => Err(TransportError::new(TransportKind::Credentials(self.config.api_key_env.clone()), text)),
            500..=599 => Err(TransportError::new(TransportKind::Server(status), text)),
            _ => Err(TransportError::new(TransportKind::Client(status), text)),
        }
    }
}

fn transport_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(t) => TransportError::new(TransportKind::Timeout, t.to_string()),
        other => TransportError::new(TransportKind::Connection(other.to_string()), other.to_string()),
    }
}

fn usage(v: &Value, key: &str) -> Option<u64> {
    v.get("usage")?.get(key)?.as_u64()
}

impl Backend for ProviderBackend {
    fn name(&self) -> &str {
        "provider"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, TransportError> {
        let body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": self.config.temperature,
            "seed": request.seed,
        });
        let v = self.post("chat/completions", &body)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        Ok(Completion {
            prompt_tokens: usage(&v, "prompt_tokens").unwrap_or_else(|| estimate_tokens(&request.prompt)),
            completion_tokens: usage(&v, "completion_tokens").unwrap_or_else(|| estimate_tokens(&text)),
            text,
        })
    }

    fn embed(&self, texts: &[String], model_id: &str, _seed: u64) -> Result<EmbeddingBatch, TransportError> {
        let v = self.post("embeddings", &json!({"model": model_id, "input": texts}))?;
        let mut rows: Vec<(u64, Vec<f64>)> = v
            .get("data")
            .and_then(Value::as_array)
            .map(|data| {
                data.iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let index = d.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
                        let values = d
                            .get("embedding")
                            .and_then(Value::as_array)
                            .map(|e| e.iter().filter_map(Value::as_f64).collect())
                            .unwrap_or_default();
                        (index, values)
                    })
                    .collect()
            })
            .unwrap_or_default();
        rows.sort_by_key(|r| r.0);
        Ok(EmbeddingBatch {
            vectors: rows.into_iter().map(|r| r.1).collect(),
            prompt_tokens: usage(&v, "prompt_tokens").unwrap_or_else(|| texts.iter().map(|t| estimate_tokens(t)).sum()),
        })
    }
}
