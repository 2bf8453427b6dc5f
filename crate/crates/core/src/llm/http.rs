//! OpenAI-compatible chat and embedding client.

use std::thread;
use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::backend::GeneratedImage;

use super::{LlmError, Provider, ProviderConfig};

pub struct HttpProvider {
    cfg: ProviderConfig,
    client: Client,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, LlmError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Config(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(Self {
            cfg,
            client,
            api_key,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    /// POST with retries on transport errors, 429 and 5xx.
    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = self.url(path);
        let mut attempt = 0u32;
        loop {
            let mut request = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let outcome = request.send();
            let retryable = match &outcome {
                Ok(resp) => {
                    resp.status().is_server_error() || resp.status() == StatusCode::TOO_MANY_REQUESTS
                }
                Err(e) => e.is_timeout() || e.is_connect() || e.is_request(),
            };
            if retryable && attempt < self.cfg.max_retries {
                attempt += 1;
                tracing::warn!(%url, attempt, "retrying provider request");
                thread::sleep(Duration::from_millis(self.cfg.retry_backoff_ms * attempt as u64));
                continue;
            }
            return decode(outcome, attempt);
        }
    }
}

fn decode(outcome: reqwest::Result<Response>, retries: u32) -> Result<Value, LlmError> {
    let resp = outcome.map_err(|e| LlmError::Provider(format!("{e} (after {retries} retries)")))?;
    let status = resp.status();
    if !status.is_success() {
        let text = resp.text().unwrap_or_default();
        return Err(LlmError::Provider(format!(
            "status {status} after {retries} retries: {}",
            text.chars().take(200).collect::<String>()
        )));
    }
    resp.json()
        .map_err(|e| LlmError::Provider(format!("invalid response body: {e}")))
}

fn data_url(image: &GeneratedImage) -> String {
    format!(
        "data:{};base64,{}",
        image.content_type(),
        base64::engine::general_purpose::STANDARD.encode(&image.bytes)
    )
}

impl HttpProvider {
    fn chat(&self, content: Value) -> Result<String, LlmError> {
        let body = json!({
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": content}],
        });
        let value = self.post("chat/completions", &body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| LlmError::Provider(format!("unexpected chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Provider("chat response has no content".into()))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.chat(Value::String(prompt.to_string()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        let body = json!({ "model": self.cfg.model_id, "input": texts });
        let value = self.post("embeddings", &body)?;
        let mut parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| LlmError::Provider(format!("unexpected embedding response: {e}")))?;
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    fn judge(
        &self,
        prompt: &str,
        images_a: &[GeneratedImage],
        images_b: &[GeneratedImage],
    ) -> Result<String, LlmError> {
        let mut parts = vec![json!({"type": "text", "text": prompt})];
        for image in images_a.iter().chain(images_b) {
            parts.push(json!({"type": "image_url", "image_url": {"url": data_url(image)}}));
        }
        self.chat(Value::Array(parts))
    }
}
