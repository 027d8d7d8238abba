//! OpenAI-compatible HTTP client for `/chat/completions` and `/embeddings`.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    check_embed_input, ChatModel, ChatRequest, Embedder, EmbeddingVector, Limiter, ProviderConfig,
    ProviderError,
};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

pub struct OpenAiClient {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    limiter: Arc<Limiter>,
}

impl std::fmt::Debug for OpenAiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiClient")
            .field("base_url", &self.cfg.base_url)
            .field("model", &self.cfg.model)
            .finish()
    }
}

impl OpenAiClient {
    /// Creates a client with its own limiter sized by `cfg.max_in_flight`.
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        let limiter = Arc::new(Limiter::new(cfg.max_in_flight.max(1)));
        Self::with_limiter(cfg, limiter)
    }

    /// Creates a client sharing `limiter` with other clients.
    pub fn with_limiter(cfg: ProviderConfig, limiter: Arc<Limiter>) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        Ok(Self {
            cfg,
            agent,
            limiter,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), endpoint)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.cfg
            .retry_base_delay
            .checked_mul(factor)
            .unwrap_or(MAX_BACKOFF)
            .min(MAX_BACKOFF)
    }

    /// POSTs `body` and returns the status and parsed JSON of a 2xx response,
    /// retrying retryable failures with exponential backoff.
    fn post_json(&self, endpoint: &str, body: &Value) -> Result<(u16, Value), ProviderError> {
        let url = self.url(endpoint);
        let mut attempt = 0;
        loop {
            let result = {
                let _slot = self.limiter.acquire();
                self.post_once(&url, body)
            };
            match result {
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    log::warn!("{endpoint}: attempt {} failed: {e}; retrying", attempt + 1);
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<(u16, Value), ProviderError> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.into_string().map_err(io_error)?;
                let value = serde_json::from_str(&text).map_err(|e| ProviderError::Malformed {
                    status,
                    message: format!("body is not JSON: {e}"),
                })?;
                Ok((status, value))
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if status == 401 || status == 403 {
                    Err(ProviderError::Auth { status })
                } else {
                    Err(ProviderError::Status { status, body })
                }
            }
            Err(ureq::Error::Transport(t)) => Err(transport_error(t)),
        }
    }
}

fn io_error(e: std::io::Error) -> ProviderError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => ProviderError::Timeout,
        _ => ProviderError::Transport(e.to_string()),
    }
}

fn transport_error(t: ureq::Transport) -> ProviderError {
    let timed_out = std::error::Error::source(&t)
        .and_then(|s| s.downcast_ref::<std::io::Error>())
        .is_some_and(|e| {
            matches!(
                e.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            )
        });
    if timed_out {
        ProviderError::Timeout
    } else {
        ProviderError::Transport(t.to_string())
    }
}

impl ChatModel for OpenAiClient {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let mut messages = Vec::new();
        if !req.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": req.user_prompt}));
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let (status, value) = self.post_json("chat/completions", &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed {
                status,
                message: "missing choices[0].message.content".into(),
            })
    }
}

impl Embedder for OpenAiClient {
    fn dim(&self) -> usize {
        self.cfg.embedding_dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        check_embed_input(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.cfg.embed_batch_size) {
            let body = json!({"model": self.cfg.embedding_model(), "input": batch});
            let (status, value) = self.post_json("embeddings", &body)?;
            out.extend(parse_embeddings(status, &value, batch.len(), self.cfg.embedding_dim)?);
        }
        Ok(out)
    }
}

fn parse_embeddings(
    status: u16,
    value: &Value,
    expected: usize,
    dim: usize,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    let malformed = |message: String| ProviderError::Malformed { status, message };
    let data = value
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing data array".into()))?;
    if data.len() != expected {
        return Err(malformed(format!(
            "expected {expected} embeddings, got {}",
            data.len()
        )));
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = match item.get("index") {
            Some(i) => i
                .as_u64()
                .map(|i| i as usize)
                .ok_or_else(|| malformed(format!("data[{pos}].index is not an integer")))?,
            None => pos,
        };
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(format!("data[{pos}].embedding missing")))?
            .iter()
            .map(Value::as_f64)
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| malformed(format!("data[{pos}].embedding has non-numbers")))?;
        if values.len() != dim {
            return Err(ProviderError::DimensionMismatch {
                expected: dim,
                got: values.len(),
            });
        }
        rows.push((index, values));
    }
    rows.sort_by_key(|(i, _)| *i);
    if rows.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
        return Err(malformed("embedding indices are not a permutation".into()));
    }
    rows.into_iter()
        .map(|(_, v)| EmbeddingVector::from_f64(&v))
        .collect()
}
