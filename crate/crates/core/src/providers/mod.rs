//! Chat-completion and embedding providers.
//!
//! Every embedding that leaves this module is L2-normalized, so an inner
//! product between two of them is their cosine similarity.

mod http;
mod limiter;
mod mock;

use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

use crate::template::TemplateId;

pub use http::OpenAiClient;
pub use limiter::{Limiter, LimiterGuard};
pub use mock::{load_mock_rules, mock_embed, MockChat, MockEmbedder, MockReply, MockRule};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response (HTTP {status}): {message}")]
    Malformed { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("embedding dimension {got} does not match configured {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mock provider failure: {0}")]
    Mock(String),
}

impl ProviderError {
    /// Timeouts, transport failures and 5xx responses are worth retrying;
    /// 4xx responses never are.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ProviderError::Auth { status }
            | ProviderError::Status { status, .. }
            | ProviderError::Malformed { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Which prompt produced this request. Not sent over the wire.
    pub template: Option<TemplateId>,
    /// Placeholder values used to render `user_prompt`. Not sent over the wire.
    pub bindings: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: String::new(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_tokens: 512,
            template: None,
            bindings: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.user_prompt.is_empty() {
            return Err(ProviderError::Validation("user prompt is empty".into()));
        }
        // Also rejects NaN.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.temperature >= 0.0) {
            return Err(ProviderError::Validation("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::Validation("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn binding(&self, name: &str) -> Option<&str> {
        self.bindings.get(name).map(String::as_str)
    }
}

/// A unit-norm embedding. Stored in single precision; inner products are
/// accumulated in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn from_f64(raw: &[f64]) -> Result<Self, ProviderError> {
        if raw.is_empty() {
            return Err(ProviderError::Validation("embedding has no components".into()));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::Validation("embedding has non-finite components".into()));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProviderError::Validation("embedding is the zero vector".into()));
        }
        Ok(Self {
            values: raw.iter().map(|x| (x / norm) as f32).collect(),
        })
    }

    pub fn from_f32(raw: &[f32]) -> Result<Self, ProviderError> {
        let wide: Vec<f64> = raw.iter().map(|&x| f64::from(x)).collect();
        Self::from_f64(&wide)
    }

    /// Wraps components already known to be unit norm (e.g. read back from
    /// an index file). Returns `None` when they are not.
    pub fn from_normalized(values: Vec<f32>) -> Option<Self> {
        let v = Self { values };
        let ok = !v.values.is_empty()
            && v.values.iter().all(|x| x.is_finite())
            && (v.norm() - 1.0).abs() <= 1e-5;
        ok.then_some(v)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&x| f64::from(x)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    /// Inner product; equals cosine similarity since both sides are unit norm.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot_f32(&self.values, &other.values)
    }
}

pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One unit-norm vector per input, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut out = self.embed(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| ProviderError::Validation("provider returned no embedding".into()))
    }
}

impl<T: ChatModel + ?Sized> ChatModel for std::sync::Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
}

pub(crate) fn check_embed_input(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        Err(ProviderError::Validation("no texts to embed".into()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    /// Model used for `/embeddings`; falls back to `model` when unset.
    pub embedding_model: Option<String>,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub retry_base_delay: Duration,
    pub embedding_dim: usize,
    pub embed_batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "llama-3.3-70b-instruct".into(),
            embedding_model: Some("bge-large-en-v1.5".into()),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            retry_base_delay: Duration::from_millis(250),
            embedding_dim: 1024,
            embed_batch_size: 64,
            max_in_flight: 8,
        }
    }
}

impl ProviderConfig {
    pub const MAX_RETRIES_LIMIT: u32 = 10;

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.base_url.trim().is_empty() {
            return Err(ProviderError::Config("base_url is empty".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(ProviderError::Config(format!(
                "base_url {} is not an http(s) URL",
                self.base_url
            )));
        }
        if self.embedding_dim == 0 {
            return Err(ProviderError::Config("embedding_dim must be positive".into()));
        }
        if self.max_retries > Self::MAX_RETRIES_LIMIT {
            return Err(ProviderError::Config(format!(
                "max_retries {} exceeds {}",
                self.max_retries,
                Self::MAX_RETRIES_LIMIT
            )));
        }
        if self.embed_batch_size == 0 || self.max_in_flight == 0 {
            return Err(ProviderError::Config(
                "embed_batch_size and max_in_flight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn embedding_model(&self) -> &str {
        self.embedding_model.as_deref().unwrap_or(&self.model)
    }
}
