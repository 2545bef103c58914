//! OpenAI-compatible HTTP backends for generation and title embeddings.

use std::sync::OnceLock;

use gnome_core::analysis::{AnalysisError, EmbeddingProvider};
use gnome_core::domainmap::{CompletionRequest, LlmClient, LlmError};
use gnome_core::pipeline::{EmbeddingSettings, LlmSettings};
use reqwest::blocking::{Client, RequestBuilder};
use serde_json::{json, Value};

const MAX_ERROR_BODY: usize = 500;

fn api_key(var: &str) -> Option<String> {
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => Some(v),
        _ => {
            log::warn!("{var} is not set; sending requests without an API key");
            None
        }
    }
}

fn authorize(req: RequestBuilder, key: &Option<String>) -> RequestBuilder {
    match key {
        Some(k) => req.bearer_auth(k),
        None => req,
    }
}

fn truncate(mut s: String) -> String {
    if s.len() > MAX_ERROR_BODY {
        let mut end = MAX_ERROR_BODY;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        s.truncate(end);
    }
    s
}

/// Chat-completions client. The key is read once, from the environment
/// variable named in the settings.
pub struct HttpLlmClient {
    client: Client,
    endpoint: String,
    model: String,
    key: Option<String>,
}

impl HttpLlmClient {
    pub fn new(settings: &LlmSettings) -> anyhow::Result<Self> {
        Ok(HttpLlmClient {
            client: Client::builder().build()?,
            endpoint: settings.endpoint.clone(),
            model: settings.model.clone(),
            key: api_key(&settings.api_key_env),
        })
    }
}

fn transport(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "seed": request.seed,
        });
        let req = self.client.post(&self.endpoint).timeout(request.timeout).json(&body);
        let resp = authorize(req, &self.key).send().map_err(transport)?;
        let status = resp.status();
        let text = resp.text().map_err(transport)?;
        if !status.is_success() {
            return Err(LlmError::Status { status: status.as_u16(), body: truncate(text) });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| LlmError::InvalidResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::InvalidResponse("no choices[0].message.content".into()))
    }
}

/// Embeddings endpoint client. The dimension is whatever the first
/// response returns; later responses must agree with it.
pub struct HttpEmbedder {
    client: Client,
    endpoint: String,
    model: String,
    key: Option<String>,
    dimension: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(settings: &EmbeddingSettings) -> anyhow::Result<Self> {
        Ok(HttpEmbedder {
            client: Client::builder().build()?,
            endpoint: settings.endpoint.clone(),
            model: settings.model.clone(),
            key: api_key(&settings.api_key_env),
            dimension: OnceLock::new(),
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension.get().copied().unwrap_or(0)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, AnalysisError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let provider = |m: String| AnalysisError::Provider(m);
        let req = self.client.post(&self.endpoint).json(&json!({"model": self.model, "input": texts}));
        let resp = authorize(req, &self.key).send().map_err(|e| provider(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| provider(e.to_string()))?;
        if !status.is_success() {
            return Err(provider(format!("HTTP {}: {}", status.as_u16(), truncate(text))));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| provider(e.to_string()))?;
        let data = v.get("data").and_then(Value::as_array).ok_or_else(|| provider("response has no data array".into()))?;
        if data.len() != texts.len() {
            return Err(provider(format!("{} embeddings for {} inputs", data.len(), texts.len())));
        }
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let vector: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_f64).collect())
                .ok_or_else(|| provider(format!("item {pos} has no numeric embedding")))?;
            let expected = *self.dimension.get_or_init(|| vector.len());
            if vector.len() != expected {
                return Err(AnalysisError::DimensionMismatch { index, expected, found: vector.len() });
            }
            *out.get_mut(index).ok_or_else(|| provider(format!("index {index} out of range")))? = vector;
        }
        Ok(out)
    }
}
