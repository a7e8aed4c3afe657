//! Chat-completion and embedding clients.
//!
//! The wire format is the common JSON-over-HTTP convention:
//! `POST {endpoint}/chat/completions` with `{model, messages}` and
//! `POST {endpoint}/embeddings` with `{model, input}`. Every request has a
//! stable key (SHA-256 of its canonical JSON) used by the fixture mock and by
//! record/replay transcripts.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed_index::{EmbedError, Embedder, EmbeddingVector, LocalEmbedder};

pub const API_KEY_ENV: &str = "SCENEFORGE_API_KEY";
pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-3-small";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4";

/// Fixture responses for the bundled benchmark (request key → reply text).
pub const DEFAULT_MOCK_FIXTURES_JSON: &str = include_str!("../data/mock_fixtures.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("http status {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed provider response after {attempts} attempt(s): {message}")]
    MalformedResponse { message: String, attempts: u32 },
    #[error("no fixture or transcript for request {key}")]
    MissingFixture { key: String },
    #[error("provider configuration error: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn attempts(&self) -> u32 {
        match self {
            ProviderError::Timeout { attempts }
            | ProviderError::Http { attempts, .. }
            | ProviderError::Transport { attempts, .. }
            | ProviderError::MalformedResponse { attempts, .. } => *attempts,
            ProviderError::MissingFixture { .. } | ProviderError::Config(_) => 0,
        }
    }

    fn retryable(&self) -> bool {
        match self {
            ProviderError::Timeout { .. } | ProviderError::Transport { .. } => true,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            ProviderError::Timeout { .. } => ProviderError::Timeout { attempts: n },
            ProviderError::Http { status, body, .. } => ProviderError::Http { status, body, attempts: n },
            ProviderError::Transport { message, .. } => ProviderError::Transport { message, attempts: n },
            ProviderError::MalformedResponse { message, .. } => {
                ProviderError::MalformedResponse { message, attempts: n }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Base delay for exponential backoff between attempts.
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: DEFAULT_CHAT_MODEL.into(),
            api_key_env: API_KEY_ENV.into(),
            timeout_s: 30.0,
            max_retries: 2,
            backoff_ms: 250,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(ProviderError::Config("timeout_s must be positive".into()));
        }
        if self.endpoint.is_empty() || self.model.is_empty() {
            return Err(ProviderError::Config("endpoint and model are required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

pub trait ChatProvider: Send + Sync {
    fn model(&self) -> &str;
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn model(&self) -> &str;
    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable key of a chat request.
pub fn chat_request_key(model: &str, messages: &[ChatMessage]) -> String {
    let body = serde_json::to_vec(&json!({"kind": "chat", "request": ChatRequest { model, messages }}))
        .expect("serializable");
    sha256_hex(&body)
}

/// Stable key of an embeddings request.
pub fn embedding_request_key(model: &str, input: &[String]) -> String {
    let body = serde_json::to_vec(&json!({"kind": "embeddings", "request": EmbeddingRequest { model, input }}))
        .expect("serializable");
    sha256_hex(&body)
}

/// Blocking HTTP client with per-request timeout and exponential backoff.
pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn post_once(&self, route: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), route);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Http { status, attempts: 1, body });
        }
        resp.body_mut().read_json::<Value>().map_err(|e| match map_ureq_error(e) {
            ProviderError::Transport { message, .. } => ProviderError::MalformedResponse { message, attempts: 1 },
            other => other,
        })
    }

    fn post(&self, route: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(route, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt <= self.config.max_retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("provider request failed ({e}); retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                }
                Err(e) => return Err(e.with_attempts(attempt)),
            }
        }
    }
}

fn map_ureq_error(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout { attempts: 1 },
        ureq::Error::Io(io)
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) =>
        {
            ProviderError::Timeout { attempts: 1 }
        }
        ureq::Error::Json(j) => ProviderError::MalformedResponse { message: j.to_string(), attempts: 1 },
        other => ProviderError::Transport { message: other.to_string(), attempts: 1 },
    }
}

fn malformed(message: impl Into<String>) -> ProviderError {
    ProviderError::MalformedResponse { message: message.into(), attempts: 1 }
}

impl ChatProvider for HttpProvider {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let body = serde_json::to_value(ChatRequest { model: &self.config.model, messages })
            .expect("serializable");
        let v = self.post("chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| malformed("missing choices[0].message.content"))
    }
}

impl EmbeddingProvider for HttpProvider {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = serde_json::to_value(EmbeddingRequest { model: &self.config.model, input: texts })
            .expect("serializable");
        let v = self.post("embeddings", &body)?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("missing data array"))?;
        let mut items: Vec<(u64, Vec<f32>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
            let emb: Vec<f32> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("missing embedding"))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32).ok_or_else(|| malformed("non-numeric embedding")))
                .collect::<Result<_, _>>()?;
            items.push((index, emb));
        }
        items.sort_by_key(|(i, _)| *i);
        if items.len() != texts.len() {
            return Err(malformed(format!("expected {} embeddings, got {}", texts.len(), items.len())));
        }
        items
            .into_iter()
            .map(|(_, v)| EmbeddingVector::from_raw(&v).map_err(|e| malformed(e.to_string())))
            .collect()
    }
}

/// Offline provider: chat replies come from a fixture table keyed by
/// [`chat_request_key`]; embeddings come from the local trigram embedder.
pub struct MockProvider {
    model: String,
    fixtures: HashMap<String, String>,
    embedder: LocalEmbedder,
}

impl MockProvider {
    pub fn new(model: impl Into<String>, fixtures: HashMap<String, String>) -> Self {
        Self { model: model.into(), fixtures, embedder: LocalEmbedder::default() }
    }

    pub fn from_json(model: impl Into<String>, text: &str) -> Result<Self, ProviderError> {
        let fixtures: HashMap<String, String> =
            serde_json::from_str(text).map_err(|e| ProviderError::Config(format!("fixtures: {e}")))?;
        Ok(Self::new(model, fixtures))
    }

    /// Mock loaded with the bundled benchmark fixtures.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_CHAT_MODEL, DEFAULT_MOCK_FIXTURES_JSON).expect("bundled fixtures parse")
    }

    pub fn insert(&mut self, messages: &[ChatMessage], reply: impl Into<String>) {
        self.fixtures.insert(chat_request_key(&self.model, messages), reply.into());
    }
}

impl ChatProvider for MockProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let key = chat_request_key(&self.model, messages);
        self.fixtures
            .get(&key)
            .cloned()
            .ok_or(ProviderError::MissingFixture { key })
    }
}

impl EmbeddingProvider for MockProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| self.embedder.embed(t).map_err(|e| malformed(e.to_string())))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptEntry {
    key: String,
    request: Value,
    response: Value,
}

fn write_transcript(dir: &Path, entry: &TranscriptEntry) -> Result<(), ProviderError> {
    let io = |e: std::io::Error| ProviderError::Config(format!("transcript {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let bytes = serde_json::to_vec_pretty(entry).expect("serializable");
    crate::io::write_atomic(&dir.join(format!("{}.json", entry.key)), &bytes).map_err(io)
}

/// Wraps a provider and records each request/response pair into `dir`.
pub struct Recording<P> {
    inner: P,
    dir: PathBuf,
}

impl<P> Recording<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Self {
        Self { inner, dir: dir.into() }
    }
}

impl<P: ChatProvider> ChatProvider for Recording<P> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let reply = self.inner.chat(messages)?;
        write_transcript(
            &self.dir,
            &TranscriptEntry {
                key: chat_request_key(self.inner.model(), messages),
                request: json!({"model": self.inner.model(), "messages": messages}),
                response: Value::String(reply.clone()),
            },
        )?;
        Ok(reply)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Recording<P> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let vectors = self.inner.embed_remote(texts)?;
        let response: Vec<&[f32]> = vectors.iter().map(EmbeddingVector::values).collect();
        write_transcript(
            &self.dir,
            &TranscriptEntry {
                key: embedding_request_key(self.inner.model(), texts),
                request: json!({"model": self.inner.model(), "input": texts}),
                response: json!(response),
            },
        )?;
        Ok(vectors)
    }
}

/// Serves responses from a transcript directory written by [`Recording`].
pub struct Replay {
    model: String,
    dir: PathBuf,
}

impl Replay {
    pub fn new(model: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        Self { model: model.into(), dir: dir.into() }
    }

    fn lookup(&self, key: String) -> Result<Value, ProviderError> {
        let path = self.dir.join(format!("{key}.json"));
        let text = fs::read_to_string(&path).map_err(|_| ProviderError::MissingFixture { key })?;
        let entry: TranscriptEntry =
            serde_json::from_str(&text).map_err(|e| malformed(format!("{}: {e}", path.display())))?;
        Ok(entry.response)
    }
}

impl ChatProvider for Replay {
    fn model(&self) -> &str {
        &self.model
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        match self.lookup(chat_request_key(&self.model, messages))? {
            Value::String(s) => Ok(s),
            _ => Err(malformed("transcript response is not a string")),
        }
    }
}

impl EmbeddingProvider for Replay {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let raw: Vec<Vec<f32>> = serde_json::from_value(self.lookup(embedding_request_key(&self.model, texts))?)
            .map_err(|e| malformed(e.to_string()))?;
        raw.into_iter()
            .map(|v| EmbeddingVector::from_unit_or_raw(v).map_err(|e| malformed(e.to_string())))
            .collect()
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Box<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn chat(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        (**self).chat(messages)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn embed_remote(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed_remote(texts)
    }
}

/// Adapts an [`EmbeddingProvider`] to the [`Embedder`] interface used by indexes.
pub struct RemoteEmbedder<P> {
    provider: P,
    dimension: usize,
}

impl<P: EmbeddingProvider> RemoteEmbedder<P> {
    pub fn new(provider: P, dimension: usize) -> Self {
        Self { provider, dimension }
    }
}

impl<P: EmbeddingProvider> Embedder for RemoteEmbedder<P> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = self.embed_batch(&[text.to_string()])?;
        Ok(v.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let out = self.provider.embed_remote(texts)?;
        if out.len() != texts.len() {
            return Err(EmbedError::CountMismatch { expected: texts.len(), got: out.len() });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn config(endpoint: String) -> ProviderConfig {
        ProviderConfig { endpoint, timeout_s: 0.3, max_retries: 2, backoff_ms: 1, ..Default::default() }
    }

    /// Serves `n` connections with the given body-producing closure.
    fn serve(responder: impl Fn(&str) -> String + Send + 'static) -> (String, Arc<AtomicU32>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicU32::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).ok();
                let reply = responder(&String::from_utf8_lossy(&body));
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    reply.len(),
                    reply
                );
                stream.write_all(resp.as_bytes()).ok();
            }
        });
        (format!("http://{addr}/v1"), hits)
    }

    #[test]
    fn mock_is_fixture_keyed_and_stable() {
        let mut mock = MockProvider::new("m", HashMap::new());
        let msgs = vec![ChatMessage::user("hello")];
        mock.insert(&msgs, "world");
        assert_eq!(mock.chat(&msgs).unwrap(), "world");
        assert_eq!(mock.chat(&msgs).unwrap(), "world");
        let other = vec![ChatMessage::user("hello!")];
        assert!(matches!(mock.chat(&other), Err(ProviderError::MissingFixture { .. })));
        let a = mock.embed_remote(&["apple".into()]).unwrap();
        assert_eq!(a, mock.embed_remote(&["apple".into()]).unwrap());
    }

    #[test]
    fn request_keys_distinguish_model_and_kind() {
        let msgs = vec![ChatMessage::user("x")];
        assert_ne!(chat_request_key("a", &msgs), chat_request_key("b", &msgs));
        assert_ne!(chat_request_key("a", &msgs), embedding_request_key("a", &["x".into()]));
        assert_eq!(chat_request_key("a", &msgs).len(), 64);
    }

    #[test]
    fn unresponsive_endpoint_times_out_after_all_attempts() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let accepted = Arc::new(AtomicU32::new(0));
        let counter = accepted.clone();
        thread::spawn(move || {
            let mut held = Vec::new();
            for s in listener.incoming() {
                counter.fetch_add(1, Ordering::SeqCst);
                held.push(s); // never answer
            }
        });
        let p = HttpProvider::new(config(format!("http://{addr}/v1"))).unwrap();
        let err = p.chat(&[ChatMessage::user("hi")]).unwrap_err();
        assert_eq!(err, ProviderError::Timeout { attempts: 3 });
        assert_eq!(accepted.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn http_chat_and_embeddings_parse_wire_format() {
        let (url, _) = serve(|body| {
            if body.contains("\"messages\"") {
                r#"{"choices":[{"message":{"role":"assistant","content":"ok"}}]}"#.to_string()
            } else {
                r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,4.0]}]}"#.to_string()
            }
        });
        let p = HttpProvider::new(config(url)).unwrap();
        assert_eq!(p.chat(&[ChatMessage::user("hi")]).unwrap(), "ok");
        let v = p.embed_remote(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v[0].values(), &[0.6, 0.8]);
        assert_eq!(v[1].values(), &[0.0, 1.0]);
    }

    #[test]
    fn malformed_reply_is_not_retried() {
        let (url, hits) = serve(|_| r#"{"unexpected":true}"#.to_string());
        let p = HttpProvider::new(config(url)).unwrap();
        let err = p.chat(&[ChatMessage::user("hi")]).unwrap_err();
        assert!(matches!(err, ProviderError::MalformedResponse { attempts: 1, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn record_then_replay_is_identical() {
        let (url, _) = serve(|body| {
            if body.contains("\"messages\"") {
                format!(r#"{{"choices":[{{"message":{{"content":"echo {}"}}}}]}}"#, body.len())
            } else {
                r#"{"data":[{"index":0,"embedding":[0.1,0.2,0.3]}]}"#.to_string()
            }
        });
        let dir = tempfile::tempdir().unwrap();
        let live = Recording::new(HttpProvider::new(config(url)).unwrap(), dir.path());
        let msgs = vec![ChatMessage::system("s"), ChatMessage::user("u")];
        let recorded = live.chat(&msgs).unwrap();
        let rec_vec = live.embed_remote(&["t".into()]).unwrap();

        let replay = Replay::new(DEFAULT_CHAT_MODEL, dir.path());
        assert_eq!(replay.chat(&msgs).unwrap(), recorded);
        let rep_vec = replay.embed_remote(&["t".into()]).unwrap();
        assert_eq!(rep_vec, rec_vec);
        assert!(matches!(replay.chat(&[ChatMessage::user("other")]), Err(ProviderError::MissingFixture { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig { timeout_s: 0.0, ..Default::default() }.validate().is_err());
        assert!(ProviderConfig::default().validate().is_ok());
    }
}
