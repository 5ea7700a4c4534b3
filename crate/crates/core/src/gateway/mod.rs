//! Uniform access to chat-completion and embedding providers.
//!
//! Every model call in the engine goes through [`Gateway`]. Providers implement
//! [`ChatModel`] / [`Embedder`]; the gateway adds retry with exponential
//! backoff, an in-flight cap and the one-shot re-ask for structured replies.

mod embed;
mod openai;
mod scripted;

pub use embed::{cosine, HashEmbedder};
pub use openai::{OpenAiChat, OpenAiEmbedder, ENV_API_BASE, ENV_API_KEY, ENV_EMBED_MODEL, ENV_MODEL};
pub use scripted::{FixtureResponse, FnModel, Rule, ScriptedModel};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sync::Semaphore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    #[default]
    FreeText,
    Structured,
}

/// Why a call is being made. Carried alongside the request for routing and
/// logging; never sent to a remote provider and not part of the fixture key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Sample,
    SelfOptimize,
    Confidence,
    Coverage,
    Completion,
    Synthesis,
    Extraction,
    Summarize,
    DriftPrimer,
    DriftRefine,
    DriftReduce,
    TraceExtraction,
    #[default]
    Other,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Sample => "sample",
            Purpose::SelfOptimize => "self_optimize",
            Purpose::Confidence => "confidence",
            Purpose::Coverage => "coverage",
            Purpose::Completion => "completion",
            Purpose::Synthesis => "synthesis",
            Purpose::Extraction => "extraction",
            Purpose::Summarize => "summarize",
            Purpose::DriftPrimer => "drift_primer",
            Purpose::DriftRefine => "drift_refine",
            Purpose::DriftReduce => "drift_reduce",
            Purpose::TraceExtraction => "trace_extraction",
            Purpose::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RequestTag {
    pub purpose: Purpose,
    pub channel_id: String,
}

/// A function the model may invoke instead of answering in text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub response_format: ResponseFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<ToolDescriptor>>,
    #[serde(default)]
    pub tag: RequestTag,
}

impl ModelRequest {
    pub fn new(messages: Vec<Message>, temperature: f64) -> Self {
        Self {
            messages,
            temperature,
            max_tokens: 1024,
            response_format: ResponseFormat::FreeText,
            tools: None,
            tag: RequestTag::default(),
        }
    }

    pub fn structured(mut self) -> Self {
        self.response_format = ResponseFormat::Structured;
        self
    }

    pub fn tagged(mut self, purpose: Purpose, channel_id: impl Into<String>) -> Self {
        self.tag = RequestTag {
            purpose,
            channel_id: channel_id.into(),
        };
        self
    }

    pub fn with_tools(mut self, tools: Vec<ToolDescriptor>) -> Self {
        self.tools = Some(tools);
        self
    }

    /// Hex SHA-256 over the canonical JSON of (messages, temperature, response_format).
    pub fn canonical_key(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            messages: &'a [Message],
            temperature: f64,
            response_format: ResponseFormat,
        }
        let bytes = serde_json::to_vec(&Canonical {
            messages: &self.messages,
            temperature: self.temperature,
            response_format: self.response_format,
        })
        .expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Concatenated message text, for inspection.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be non-negative",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_invocation: Option<ToolInvocation>,
    #[serde(default)]
    pub usage: Usage,
}

impl ModelResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            tool_invocation: None,
            usage: Usage::default(),
        }
    }

    pub fn tool(name: impl Into<String>, arguments: serde_json::Value) -> Self {
        Self {
            text: String::new(),
            tool_invocation: Some(ToolInvocation {
                name: name.into(),
                arguments,
            }),
            usage: Usage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dimension: usize,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let dimension = values.len();
        Self { values, dimension }
    }
}

/// Failure reported by a provider implementation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider rejected request: {0}")]
    Permanent(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("provider unavailable after {attempts} attempts: {last_error}")]
    ProviderUnavailable { attempts: u32, last_error: String },
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> Result<usize, ProviderError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            initial_backoff_ms: 0,
            max_backoff_ms: 0,
            multiplier: 1.0,
        }
    }

    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

/// Re-ask prompt appended after a reply that failed to parse.
pub fn reask_messages(original: &ModelRequest, reply: &ModelResponse, error: &str) -> ModelRequest {
    let mut req = original.clone();
    req.messages.push(Message::assistant(reply.text.clone()));
    req.messages.push(Message::user(format!(
        "Your previous reply could not be parsed ({error}). \
         Reply again using exactly the requested format and nothing else."
    )));
    req
}

/// Runs `call`, parses the reply, and on a parse failure re-asks exactly once.
///
/// `call` is whatever performs the model call (the bare gateway, or a run
/// context that also logs and enforces budgets).
pub fn structured_call<T, E>(
    request: &ModelRequest,
    mut call: impl FnMut(&ModelRequest) -> Result<ModelResponse, E>,
    parse: impl Fn(&ModelResponse) -> Result<T, String>,
) -> Result<T, E>
where
    E: From<GatewayError>,
{
    let first = call(request)?;
    let error = match parse(&first) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    tracing::debug!(purpose = request.tag.purpose.as_str(), %error, "re-asking after malformed reply");
    let retry = reask_messages(request, &first, &error);
    let second = call(&retry)?;
    parse(&second).map_err(|e| GatewayError::MalformedResponse(e).into())
}

pub struct Gateway {
    chat: Arc<dyn ChatModel>,
    embedder: Arc<dyn Embedder>,
    retry: RetryPolicy,
    inflight: Semaphore,
    attempts: AtomicU64,
}

impl Gateway {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

    pub fn new(chat: Arc<dyn ChatModel>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            chat,
            embedder,
            retry: RetryPolicy::default(),
            inflight: Semaphore::new(Self::DEFAULT_MAX_IN_FLIGHT),
            attempts: AtomicU64::new(0),
        }
    }

    /// Scripted chat model with the 64-dimensional deterministic embedder.
    pub fn scripted(model: Arc<ScriptedModel>) -> Self {
        Self::new(model, Arc::new(HashEmbedder::default())).with_retry(RetryPolicy::no_delay(0))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.inflight = Semaphore::new(n);
        self
    }

    /// Total provider attempts made, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        let mut retry = 0;
        loop {
            let outcome = {
                let _permit = self.inflight.acquire();
                self.attempts.fetch_add(1, Ordering::Relaxed);
                self.chat.complete(request)
            };
            match outcome {
                Ok(resp) => return Ok(resp),
                Err(ProviderError::Permanent(e)) => return Err(GatewayError::Rejected(e)),
                Err(ProviderError::Transient(e)) => {
                    if retry >= self.retry.max_retries {
                        return Err(GatewayError::ProviderUnavailable {
                            attempts: retry + 1,
                            last_error: e,
                        });
                    }
                    let wait = self.retry.backoff(retry);
                    tracing::warn!(attempt = retry + 1, ?wait, error = %e, "transient provider failure");
                    std::thread::sleep(wait);
                    retry += 1;
                }
            }
        }
    }

    pub fn complete_structured<T>(
        &self,
        request: &ModelRequest,
        parse: impl Fn(&ModelResponse) -> Result<T, String>,
    ) -> Result<T, GatewayError> {
        structured_call(request, |r| self.complete(r), parse)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyInput);
        }
        let mut retry = 0;
        loop {
            let outcome = {
                let _permit = self.inflight.acquire();
                self.embedder.embed(texts)
            };
            match outcome {
                Ok(v) if v.len() == texts.len() => return Ok(v),
                Ok(v) => {
                    return Err(GatewayError::MalformedResponse(format!(
                        "{} embeddings for {} inputs",
                        v.len(),
                        texts.len()
                    )))
                }
                Err(ProviderError::Permanent(e)) => return Err(GatewayError::Rejected(e)),
                Err(ProviderError::Transient(e)) => {
                    if retry >= self.retry.max_retries {
                        return Err(GatewayError::ProviderUnavailable {
                            attempts: retry + 1,
                            last_error: e,
                        });
                    }
                    std::thread::sleep(self.retry.backoff(retry));
                    retry += 1;
                }
            }
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    pub fn embedding_dimension(&self) -> Result<usize, GatewayError> {
        self.embedder.dimension().map_err(|e| GatewayError::ProviderUnavailable {
            attempts: 1,
            last_error: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct Flaky {
        fail_first: u32,
        seen: AtomicU32,
    }

    impl ChatModel for Flaky {
        fn complete(&self, _: &ModelRequest) -> Result<ModelResponse, ProviderError> {
            let n = self.seen.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(ProviderError::Transient("connection refused".into()))
            } else {
                Ok(ModelResponse::text("ok"))
            }
        }
    }

    fn req() -> ModelRequest {
        ModelRequest::new(vec![Message::user("hi")], 0.0)
    }

    fn gateway(fail_first: u32, retries: u32) -> (Gateway, Arc<Flaky>) {
        let model = Arc::new(Flaky {
            fail_first,
            seen: AtomicU32::new(0),
        });
        let gw = Gateway::new(model.clone(), Arc::new(HashEmbedder::default()))
            .with_retry(RetryPolicy::no_delay(retries));
        (gw, model)
    }

    #[test]
    fn retries_then_succeeds() {
        let (gw, model) = gateway(2, 2);
        assert_eq!(gw.complete(&req()).unwrap().text, "ok");
        assert_eq!(model.seen.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausting_retries_is_unavailable_after_three_attempts() {
        let (gw, model) = gateway(u32::MAX, 2);
        match gw.complete(&req()) {
            Err(GatewayError::ProviderUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(model.seen.load(Ordering::SeqCst), 3);
        assert_eq!(gw.attempts(), 3);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
            multiplier: 2.0,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
    }

    #[test]
    fn empty_messages_rejected() {
        let (gw, _) = gateway(0, 0);
        let r = ModelRequest::new(vec![], 0.0);
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn canonical_key_ignores_tag_and_tokens() {
        let a = req().tagged(Purpose::Sample, "c0");
        let mut b = req().tagged(Purpose::Confidence, "c9");
        b.max_tokens = 7;
        assert_eq!(a.canonical_key(), b.canonical_key());
        let c = ModelRequest::new(vec![Message::user("hi")], 0.5);
        assert_ne!(a.canonical_key(), c.canonical_key());
        assert_ne!(a.canonical_key(), req().structured().canonical_key());
    }

    #[test]
    fn embed_rejects_empty_and_blank() {
        let (gw, _) = gateway(0, 0);
        assert_eq!(gw.embed(&[]), Err(GatewayError::EmptyInput));
        assert_eq!(gw.embed(&["  ".to_string()]), Err(GatewayError::EmptyInput));
    }
}
