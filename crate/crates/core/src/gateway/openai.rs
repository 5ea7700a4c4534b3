//! OpenAI-compatible chat-completions and embeddings over HTTP.

use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    ChatModel, Embedder, EmbeddingVector, ModelRequest, ModelResponse, ProviderError,
    ToolInvocation, Usage,
};

pub const ENV_API_BASE: &str = "CLIO_API_BASE";
pub const ENV_API_KEY: &str = "CLIO_API_KEY";
pub const ENV_MODEL: &str = "CLIO_MODEL";
pub const ENV_EMBED_MODEL: &str = "CLIO_EMBED_MODEL";

const DEFAULT_BASE: &str = "https://api.openai.com/v1";

fn http_client(timeout: Duration) -> Client {
    Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds")
}

fn classify_status(status: StatusCode, body: String) -> ProviderError {
    let msg = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    if status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
        || status.is_server_error()
    {
        ProviderError::Transient(msg)
    } else {
        ProviderError::Permanent(msg)
    }
}

fn post_json(client: &Client, url: &str, key: &str, body: &Value) -> Result<Value, ProviderError> {
    let mut builder = client.post(url).json(body);
    if !key.is_empty() {
        builder = builder.bearer_auth(key);
    }
    let resp = builder
        .send()
        .map_err(|e| ProviderError::Transient(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        let text = resp.text().unwrap_or_default();
        return Err(classify_status(status, text));
    }
    resp.json::<Value>()
        .map_err(|e| ProviderError::Transient(format!("invalid JSON body: {e}")))
}

#[derive(Debug, Clone)]
pub struct OpenAiChat {
    base: String,
    key: String,
    model: String,
    client: Client,
}

impl OpenAiChat {
    pub fn new(base: impl Into<String>, key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            key: key.into(),
            model: model.into(),
            client: http_client(Duration::from_secs(120)),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = http_client(timeout);
        self
    }

    /// Reads `CLIO_API_BASE`, `CLIO_API_KEY` and `CLIO_MODEL`. `None` when no model is set.
    pub fn from_env() -> Option<Self> {
        let model = std::env::var(ENV_MODEL).ok()?;
        let base = std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_BASE.into());
        let key = std::env::var(ENV_API_KEY).unwrap_or_default();
        Some(Self::new(base, key, model))
    }

    pub fn request_body(&self, request: &ModelRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(tools) = &request.tools {
            body["tools"] = tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": t.name,
                            "description": t.description,
                            "parameters": t.parameters,
                        }
                    })
                })
                .collect();
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Vec<WireToolCall>,
}

#[derive(Deserialize)]
struct WireToolCall {
    function: WireFunction,
}

#[derive(Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub(crate) fn parse_chat_completion(body: Value) -> Result<ModelResponse, ProviderError> {
    let parsed: ChatCompletion = serde_json::from_value(body)
        .map_err(|e| ProviderError::Permanent(format!("unexpected completion shape: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::Permanent("completion has no choices".into()))?;
    let tool_invocation = choice.message.tool_calls.into_iter().next().map(|c| {
        let arguments = if c.function.arguments.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(&c.function.arguments)
                .unwrap_or(Value::String(c.function.arguments))
        };
        ToolInvocation {
            name: c.function.name,
            arguments,
        }
    });
    let usage = parsed
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok(ModelResponse {
        text: choice.message.content.unwrap_or_default(),
        tool_invocation,
        usage,
    })
}

impl ChatModel for OpenAiChat {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let url = format!("{}/chat/completions", self.base);
        let body = post_json(&self.client, &url, &self.key, &self.request_body(request))?;
        parse_chat_completion(body)
    }
}

#[derive(Debug)]
pub struct OpenAiEmbedder {
    base: String,
    key: String,
    model: String,
    client: Client,
    dimension: OnceLock<usize>,
}

impl OpenAiEmbedder {
    pub fn new(base: impl Into<String>, key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            key: key.into(),
            model: model.into(),
            client: http_client(Duration::from_secs(60)),
            dimension: OnceLock::new(),
        }
    }

    /// Reads `CLIO_API_BASE`, `CLIO_API_KEY` and `CLIO_EMBED_MODEL`.
    pub fn from_env() -> Option<Self> {
        let model = std::env::var(ENV_EMBED_MODEL).ok()?;
        let base = std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_BASE.into());
        let key = std::env::var(ENV_API_KEY).unwrap_or_default();
        Some(Self::new(base, key, model))
    }
}

#[derive(Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl Embedder for OpenAiEmbedder {
    fn dimension(&self) -> Result<usize, ProviderError> {
        if let Some(d) = self.dimension.get() {
            return Ok(*d);
        }
        let probe = self.embed(&["dimension probe".to_string()])?;
        Ok(probe[0].dimension)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let url = format!("{}/embeddings", self.base);
        let body = json!({ "model": self.model, "input": texts });
        let raw = post_json(&self.client, &url, &self.key, &body)?;
        let mut list: EmbeddingList = serde_json::from_value(raw)
            .map_err(|e| ProviderError::Permanent(format!("unexpected embeddings shape: {e}")))?;
        list.data.sort_by_key(|item| item.index.unwrap_or(0));
        let vectors: Vec<EmbeddingVector> = list
            .data
            .into_iter()
            .map(|item| EmbeddingVector::new(item.embedding))
            .collect();
        if let Some(first) = vectors.first() {
            let dim = *self.dimension.get_or_init(|| first.dimension);
            if vectors.iter().any(|v| v.dimension != dim || v.values.iter().any(|x| !x.is_finite())) {
                return Err(ProviderError::Permanent(
                    "embedding dimension changed or non-finite values".into(),
                ));
            }
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayError, HashEmbedder, Message, RetryPolicy, ToolDescriptor};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves one canned HTTP response per connection and returns the request bodies.
    fn one_shot_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (addr, handle)
    }

    #[test]
    fn sends_tools_and_parses_tool_call() {
        let reply = json!({
            "choices": [{"message": {"content": null, "tool_calls": [
                {"id": "1", "type": "function", "function": {"name": "complete", "arguments": "{\"rationale\":\"done\"}"}}
            ]}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 3}
        });
        let (base, server) = one_shot_server(vec![(200, reply.to_string())]);
        let chat = OpenAiChat::new(base, "k", "gpt-test");
        let req = ModelRequest::new(vec![Message::user("finish?")], 0.2).with_tools(vec![ToolDescriptor {
            name: "complete".into(),
            description: "end the channel".into(),
            parameters: json!({"type": "object"}),
        }]);
        let resp = chat.complete(&req).unwrap();
        let call = resp.tool_invocation.unwrap();
        assert_eq!(call.name, "complete");
        assert_eq!(call.arguments["rationale"], "done");
        assert_eq!(resp.usage.prompt_tokens, 11);
        let sent: Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "gpt-test");
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["tools"][0]["function"]["name"], "complete");
        assert!(sent.get("tag").is_none());
    }

    #[test]
    fn server_errors_are_retried() {
        let ok = json!({"choices": [{"message": {"content": "answer: B"}}]});
        let (base, server) = one_shot_server(vec![(503, "{}".into()), (200, ok.to_string())]);
        let gw = Gateway::new(
            Arc::new(OpenAiChat::new(base, "", "m")),
            Arc::new(HashEmbedder::default()),
        )
        .with_retry(RetryPolicy::no_delay(2));
        let resp = gw.complete(&ModelRequest::new(vec![Message::user("q")], 0.0)).unwrap();
        assert_eq!(resp.text, "answer: B");
        assert_eq!(server.join().unwrap().len(), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (base, server) = one_shot_server(vec![(400, "{\"error\":\"bad\"}".into())]);
        let gw = Gateway::new(
            Arc::new(OpenAiChat::new(base, "", "m")),
            Arc::new(HashEmbedder::default()),
        )
        .with_retry(RetryPolicy::no_delay(2));
        let err = gw.complete(&ModelRequest::new(vec![Message::user("q")], 0.0));
        assert!(matches!(err, Err(GatewayError::Rejected(_))));
        assert_eq!(server.join().unwrap().len(), 1);
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        // Bind then drop to get a port nobody listens on.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let gw = Gateway::new(
            Arc::new(OpenAiChat::new(format!("http://127.0.0.1:{port}"), "", "m")
                .with_timeout(Duration::from_secs(2))),
            Arc::new(HashEmbedder::default()),
        )
        .with_retry(RetryPolicy::no_delay(2));
        match gw.complete(&ModelRequest::new(vec![Message::user("q")], 0.0)) {
            Err(GatewayError::ProviderUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(gw.attempts(), 3);
    }

    #[test]
    fn embeddings_keep_input_order() {
        let reply = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]});
        let (base, server) = one_shot_server(vec![(200, reply.to_string())]);
        let e = OpenAiEmbedder::new(base, "", "emb");
        let v = e.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v[0].values, vec![1.0, 0.0]);
        assert_eq!(e.dimension().unwrap(), 2);
        let sent: Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(sent["input"][1], "b");
    }
}
