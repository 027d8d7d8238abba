//! Deterministic offline providers.
//!
//! [`MockChat`] answers from a rule table keyed by prompt template and
//! placeholder content. When no rule matches it echoes the primary
//! placeholder of the request, except for relevance judgments, which default
//! to `True`. [`MockEmbedder`] projects a bag of hashed tokens into a fixed
//! number of signed buckets.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Deserialize;

use super::{check_embed_input, ChatModel, ChatRequest, Embedder, EmbeddingVector, ProviderError};
use crate::jsonl::{read_jsonl, JsonlError};
use crate::template::TemplateId;
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Fail(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawRule")]
pub struct MockRule {
    /// Only requests rendered from this template match; `None` matches any.
    pub template: Option<TemplateId>,
    /// Placeholder whose value is searched; `None` searches the whole prompt.
    pub placeholder: Option<String>,
    pub contains: String,
    /// Further placeholder/substring conditions that must all hold.
    pub also: BTreeMap<String, String>,
    pub reply: MockReply,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    template: Option<TemplateId>,
    placeholder: Option<String>,
    #[serde(default)]
    contains: String,
    #[serde(default)]
    also: BTreeMap<String, String>,
    reply: Option<String>,
    error: Option<String>,
}

impl TryFrom<RawRule> for MockRule {
    type Error = String;

    fn try_from(raw: RawRule) -> Result<Self, String> {
        let reply = match (raw.reply, raw.error) {
            (Some(text), None) => MockReply::Text(text),
            (None, Some(msg)) => MockReply::Fail(msg),
            _ => return Err("a rule needs exactly one of \"reply\" or \"error\"".into()),
        };
        Ok(Self {
            template: raw.template,
            placeholder: raw.placeholder,
            contains: raw.contains,
            also: raw.also,
            reply,
        })
    }
}

impl MockRule {
    pub fn reply(template: TemplateId, placeholder: &str, contains: &str, reply: &str) -> Self {
        Self {
            template: Some(template),
            placeholder: Some(placeholder.to_string()),
            contains: contains.to_string(),
            also: BTreeMap::new(),
            reply: MockReply::Text(reply.to_string()),
        }
    }

    pub fn fail(template: Option<TemplateId>, contains: &str, message: &str) -> Self {
        Self {
            template,
            placeholder: None,
            contains: contains.to_string(),
            also: BTreeMap::new(),
            reply: MockReply::Fail(message.to_string()),
        }
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        if self.template.is_some() && self.template != req.template {
            return false;
        }
        let haystack = match &self.placeholder {
            Some(name) => match req.binding(name) {
                Some(v) => v,
                None => return false,
            },
            None => req.user_prompt.as_str(),
        };
        haystack.contains(&self.contains)
            && self
                .also
                .iter()
                .all(|(name, needle)| req.binding(name).is_some_and(|v| v.contains(needle)))
    }

    /// Adds a condition on another placeholder.
    pub fn also(mut self, placeholder: &str, contains: &str) -> Self {
        self.also.insert(placeholder.to_string(), contains.to_string());
        self
    }
}

/// Loads a JSON-lines rule table. Each line has `contains` and either
/// `reply` or `error`, plus optional `template`, `placeholder` and `also`
/// (an object of further placeholder/substring conditions).
pub fn load_mock_rules(path: impl AsRef<Path>) -> Result<Vec<MockRule>, JsonlError> {
    read_jsonl(path.as_ref(), |_: &MockRule| Ok(()))
}

type Responder = dyn Fn(&ChatRequest) -> Option<Result<String, ProviderError>> + Send + Sync;

#[derive(Clone, Default)]
pub struct MockChat {
    fixed: Option<String>,
    responder: Option<Arc<Responder>>,
    rules: Vec<MockRule>,
    calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for MockChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockChat")
            .field("fixed", &self.fixed)
            .field("rules", &self.rules.len())
            .field("responder", &self.responder.is_some())
            .finish()
    }
}

impl MockChat {
    /// No rules: every request gets the default echo.
    pub fn echo() -> Self {
        Self::default()
    }

    /// Answers every request with the same text.
    pub fn fixed(reply: impl Into<String>) -> Self {
        Self {
            fixed: Some(reply.into()),
            ..Self::default()
        }
    }

    pub fn with_rules(rules: Vec<MockRule>) -> Self {
        Self {
            rules,
            ..Self::default()
        }
    }

    /// Consulted before the rule table; returning `None` defers to the rules.
    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Option<Result<String, ProviderError>> + Send + Sync + 'static,
    {
        self.responder = Some(Arc::new(f));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn default_reply(req: &ChatRequest) -> String {
        match req.template {
            Some(TemplateId::Filter) => "True".to_string(),
            Some(id) => req
                .binding(id.primary_placeholder())
                .unwrap_or(&req.user_prompt)
                .to_string(),
            None => req.user_prompt.clone(),
        }
    }
}

impl ChatModel for MockChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        if let Some(text) = &self.fixed {
            return Ok(text.clone());
        }
        if let Some(f) = &self.responder {
            if let Some(out) = f(req) {
                return out;
            }
        }
        match self.rules.iter().find(|r| r.matches(req)) {
            Some(MockRule {
                reply: MockReply::Text(t),
                ..
            }) => Ok(t.clone()),
            Some(MockRule {
                reply: MockReply::Fail(m),
                ..
            }) => Err(ProviderError::Mock(m.clone())),
            None => Ok(Self::default_reply(req)),
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Hashes each token (see [`tokenize`]) to a bucket `h mod dim` with sign
/// taken from the top hash bit, sums, and L2-normalizes. A text with no
/// tokens hashes the empty string so the result is never the zero vector.
///
/// # Panics
/// If `dim < 8`.
pub fn mock_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 8, "mock embedding dimension must be at least 8");
    let mut tokens = tokenize(text);
    if tokens.is_empty() {
        tokens.push(String::new());
    }
    let mut acc = vec![0.0f64; dim];
    for tok in &tokens {
        let h = fnv1a(tok.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[(h % dim as u64) as usize] += sign;
    }
    if acc.iter().all(|&x| x == 0.0) {
        // Every token cancelled out against a colliding opposite-sign token.
        acc[(fnv1a(text.as_bytes()) % dim as u64) as usize] = 1.0;
    }
    EmbeddingVector::from_f64(&acc).expect("non-zero finite vector")
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    calls: Arc<AtomicUsize>,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Result<Self, ProviderError> {
        if dim < 8 {
            return Err(ProviderError::Config(format!(
                "mock embedding dimension {dim} is below 8"
            )));
        }
        Ok(Self {
            dim,
            calls: Arc::default(),
        })
    }

    /// Number of `embed` invocations so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        check_embed_input(texts)?;
        Ok(texts.iter().map(|t| mock_embed(t, self.dim)).collect())
    }
}
