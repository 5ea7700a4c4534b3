//! Offline, deterministic chat backend driven by fixtures.
//!
//! Lookup order for each request:
//! 1. exact fixture keyed by [`ModelRequest::canonical_key`];
//! 2. the first matching [`Rule`] (purpose / channel / substring filters);
//! 3. the ordered playlist for the request's purpose, then the generic playlist;
//! 4. an optional fallback closure.
//!
//! A fixture directory holds JSON files read in file-name order. Each file is
//! one of (fields may be combined):
//!
//! ```json
//! {"key": "<hex>", "response": "answer: B"}
//! {"rules": [{"purpose": "confidence", "channel": "c0", "contains": "IgA",
//!             "responses": ["confidence: 1.2", "confidence: 0.9"]}]}
//! {"playlist": [{"purpose": "sample", "response": "..."}]}
//! ```
//!
//! A response is either a string or `{"text": ..., "tool_invocation": {"name": ..., "arguments": {...}}}`.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatModel, ModelRequest, ModelResponse, ProviderError, Purpose, ToolInvocation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureResponse {
    Text(String),
    Full {
        #[serde(default)]
        text: String,
        #[serde(default)]
        tool_invocation: Option<ToolInvocation>,
    },
}

impl FixtureResponse {
    pub fn into_response(self) -> ModelResponse {
        match self {
            FixtureResponse::Text(text) => ModelResponse::text(text),
            FixtureResponse::Full {
                text,
                tool_invocation,
            } => ModelResponse {
                text,
                tool_invocation,
                usage: Default::default(),
            },
        }
    }
}

impl From<&str> for FixtureResponse {
    fn from(s: &str) -> Self {
        FixtureResponse::Text(s.to_string())
    }
}

impl From<String> for FixtureResponse {
    fn from(s: String) -> Self {
        FixtureResponse::Text(s)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(untagged)]
enum OneOrMany {
    #[default]
    None,
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::None => Vec::new(),
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RuleSpec {
    purpose: Option<Purpose>,
    channel: Option<String>,
    channel_prefix: Option<String>,
    #[serde(default)]
    contains: OneOrMany,
    response: Option<FixtureResponse>,
    #[serde(default)]
    responses: Vec<FixtureResponse>,
}

/// Matches requests by purpose, channel and text; replies from a list whose
/// last entry repeats once the list is exhausted.
#[derive(Debug)]
pub struct Rule {
    purpose: Option<Purpose>,
    channel: Option<String>,
    channel_prefix: Option<String>,
    contains: Vec<String>,
    responses: Vec<FixtureResponse>,
    hits: AtomicUsize,
}

impl Rule {
    pub fn any() -> Self {
        Self {
            purpose: None,
            channel: None,
            channel_prefix: None,
            contains: Vec::new(),
            responses: Vec::new(),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn purpose(purpose: Purpose) -> Self {
        Self {
            purpose: Some(purpose),
            ..Self::any()
        }
    }

    pub fn channel(mut self, id: impl Into<String>) -> Self {
        self.channel = Some(id.into());
        self
    }

    /// Matches the channel and every descendant (`id` or `id.` prefix).
    pub fn subtree(mut self, id: impl Into<String>) -> Self {
        self.channel_prefix = Some(id.into());
        self
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn reply(mut self, r: impl Into<FixtureResponse>) -> Self {
        self.responses.push(r.into());
        self
    }

    pub fn replies<I, R>(mut self, rs: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<FixtureResponse>,
    {
        self.responses.extend(rs.into_iter().map(Into::into));
        self
    }

    fn matches(&self, req: &ModelRequest) -> bool {
        if self.purpose.is_some_and(|p| p != req.tag.purpose) {
            return false;
        }
        if self.channel.as_ref().is_some_and(|c| *c != req.tag.channel_id) {
            return false;
        }
        if let Some(prefix) = &self.channel_prefix {
            let id = &req.tag.channel_id;
            if !(id == prefix || id.starts_with(&format!("{prefix}."))) {
                return false;
            }
        }
        if !self.contains.is_empty() {
            let text = req.full_text();
            if !self.contains.iter().all(|n| text.contains(n.as_str())) {
                return false;
            }
        }
        true
    }

    fn next(&self) -> Option<FixtureResponse> {
        if self.responses.is_empty() {
            return None;
        }
        let n = self.hits.fetch_add(1, Ordering::SeqCst);
        Some(self.responses[n.min(self.responses.len() - 1)].clone())
    }
}

#[derive(Debug, Deserialize)]
struct PlaylistEntry {
    purpose: Option<Purpose>,
    response: FixtureResponse,
}

#[derive(Debug, Deserialize)]
struct FixtureFile {
    key: Option<String>,
    response: Option<FixtureResponse>,
    #[serde(default)]
    entries: Vec<KeyedEntry>,
    #[serde(default)]
    rules: Vec<RuleSpec>,
    #[serde(default)]
    playlist: Vec<PlaylistEntry>,
}

#[derive(Debug, Deserialize)]
struct KeyedEntry {
    key: String,
    response: FixtureResponse,
}

type Fallback = Box<dyn Fn(&ModelRequest) -> Option<ModelResponse> + Send + Sync>;

#[derive(Default)]
pub struct ScriptedModel {
    keyed: HashMap<String, FixtureResponse>,
    rules: Vec<Rule>,
    playlists: Mutex<HashMap<Option<Purpose>, VecDeque<FixtureResponse>>>,
    fallback: Option<Fallback>,
    log: Mutex<Vec<ModelRequest>>,
}

impl ScriptedModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn keyed(mut self, key: impl Into<String>, response: impl Into<FixtureResponse>) -> Self {
        self.keyed.insert(key.into(), response.into());
        self
    }

    /// Fixture for exactly this request.
    pub fn on_request(self, req: &ModelRequest, response: impl Into<FixtureResponse>) -> Self {
        let key = req.canonical_key();
        self.keyed(key, response)
    }

    pub fn rule(mut self, rule: Rule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn playlist(
        self,
        purpose: Option<Purpose>,
        responses: impl IntoIterator<Item = impl Into<FixtureResponse>>,
    ) -> Self {
        self.playlists
            .lock()
            .unwrap()
            .entry(purpose)
            .or_default()
            .extend(responses.into_iter().map(Into::into));
        self
    }

    pub fn fallback(
        mut self,
        f: impl Fn(&ModelRequest) -> Option<ModelResponse> + Send + Sync + 'static,
    ) -> Self {
        self.fallback = Some(Box::new(f));
        self
    }

    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut model = Self::new();
        for path in paths {
            let raw = std::fs::read_to_string(&path)?;
            let file: FixtureFile = serde_json::from_str(&raw).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            model.add_file(file);
        }
        Ok(model)
    }

    fn add_file(&mut self, file: FixtureFile) {
        if let (Some(key), Some(resp)) = (file.key, file.response) {
            self.keyed.insert(key, resp);
        }
        for e in file.entries {
            self.keyed.insert(e.key, e.response);
        }
        for entry in file.rules {
            let mut rule = Rule {
                purpose: entry.purpose,
                channel: entry.channel,
                channel_prefix: entry.channel_prefix,
                contains: entry.contains.into_vec(),
                responses: entry.responses,
                hits: AtomicUsize::new(0),
            };
            if let Some(r) = entry.response {
                rule.responses.insert(0, r);
            }
            self.rules.push(rule);
        }
        let mut playlists = self.playlists.lock().unwrap();
        for entry in file.playlist {
            playlists.entry(entry.purpose).or_default().push_back(entry.response);
        }
    }

    /// Every request seen so far, in arrival order.
    pub fn requests(&self) -> Vec<ModelRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn requests_for(&self, purpose: Purpose) -> Vec<ModelRequest> {
        self.requests()
            .into_iter()
            .filter(|r| r.tag.purpose == purpose)
            .collect()
    }

    fn resolve(&self, req: &ModelRequest) -> Option<ModelResponse> {
        if let Some(r) = self.keyed.get(&req.canonical_key()) {
            return Some(r.clone().into_response());
        }
        for rule in &self.rules {
            if rule.matches(req) {
                if let Some(r) = rule.next() {
                    return Some(r.into_response());
                }
            }
        }
        {
            let mut playlists = self.playlists.lock().unwrap();
            for key in [Some(req.tag.purpose), None] {
                if let Some(r) = playlists.get_mut(&key).and_then(|q| q.pop_front()) {
                    return Some(r.into_response());
                }
            }
        }
        self.fallback.as_ref().and_then(|f| f(req))
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.log.lock().unwrap().push(request.clone());
        self.resolve(request).ok_or_else(|| {
            ProviderError::Permanent(format!(
                "no fixture for {} request on channel {:?} (key {})",
                request.tag.purpose.as_str(),
                request.tag.channel_id,
                request.canonical_key()
            ))
        })
    }
}

/// Chat model backed by a closure; handy for property tests.
pub struct FnModel<F>(pub F);

impl<F> ChatModel for FnModel<F>
where
    F: Fn(&ModelRequest) -> Result<ModelResponse, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (self.0)(request)
    }
}
