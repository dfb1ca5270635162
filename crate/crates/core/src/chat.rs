//! Chat-completions client over HTTP and a record/replay cache keyed by a
//! hash of the request.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.to_string(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn truncated(&self) -> bool {
        self.finish_reason.as_deref() == Some("length")
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("http: {0}")]
    Http(String),
    #[error("server returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    Shape(String),
    #[error("no recorded response for request {0} (pass --live to record)")]
    CacheMiss(String),
    #[error("cache io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub api_key_env: String,
    /// Role used for tool results in the message list.
    pub tool_role: String,
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            max_tokens: Some(512),
            api_key_env: "OPENAI_API_KEY".to_string(),
            tool_role: "tool".to_string(),
            cache_dir: None,
            timeout_secs: 60,
        }
    }
}

pub struct HttpChatClient {
    http: reqwest::blocking::Client,
    url: String,
    api_key: String,
}

impl HttpChatClient {
    pub fn new(config: &ChatConfig) -> Result<Self, ChatError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| ChatError::MissingKey(config.api_key_env.clone()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ChatError::Http(e.to_string()))?;
        Ok(HttpChatClient {
            http,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// Decodes a chat-completions response body.
pub fn decode_response(body: &str) -> Result<ChatResponse, ChatError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| ChatError::Shape(e.to_string()))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| ChatError::Shape("no choices".into()))?;
    Ok(ChatResponse {
        content: choice.message.content.unwrap_or_default(),
        finish_reason: choice.finish_reason,
        usage: wire.usage,
    })
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let resp = self
            .http
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| ChatError::Http(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| ChatError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Status { status: status.as_u16(), body });
        }
        decode_response(&body)
    }
}

/// Hex sha256 of the request's JSON encoding.
pub fn request_key(request: &ChatRequest) -> String {
    let bytes = serde_json::to_vec(request).expect("request serialization is infallible");
    hex::encode(Sha256::digest(bytes))
}

/// Serves recorded responses from `dir`. With an inner client, misses are
/// forwarded and recorded; without one, a miss is an error.
pub struct ReplayCache {
    dir: PathBuf,
    inner: Option<Box<dyn ChatClient>>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: ChatRequest,
    response: ChatResponse,
}

impl ReplayCache {
    pub fn replay_only(dir: impl Into<PathBuf>) -> Self {
        ReplayCache { dir: dir.into(), inner: None }
    }

    pub fn recording(dir: impl Into<PathBuf>, inner: Box<dyn ChatClient>) -> Self {
        ReplayCache { dir: dir.into(), inner: Some(inner) }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn store(&self, request: &ChatRequest, response: &ChatResponse) -> Result<(), ChatError> {
        let key = request_key(request);
        let entry = CacheEntry { request: request.clone(), response: response.clone() };
        let text = serde_json::to_string_pretty(&entry).expect("cache entry serialization is infallible");
        write_atomic(&self.path(&key), text.as_bytes())
    }
}

/// Writes through a uniquely named temp file in the same directory and
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ChatError> {
    let io = |source| ChatError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

impl ChatClient for ReplayCache {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let key = request_key(request);
        let path = self.path(&key);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| ChatError::Shape(format!("{}: {e}", path.display())))?;
                return Ok(entry.response);
            }
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(ChatError::Io { path, source: e }),
            Err(_) => {}
        }
        let inner = self.inner.as_ref().ok_or(ChatError::CacheMiss(key))?;
        let response = inner.complete(request)?;
        self.store(request, &response)?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Counting(Arc<AtomicUsize>);

    impl ChatClient for Counting {
        fn complete(&self, r: &ChatRequest) -> Result<ChatResponse, ChatError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(ChatResponse {
                content: format!("echo {}", r.messages.len()),
                finish_reason: Some("stop".into()),
                usage: Some(Usage { prompt_tokens: 3, completion_tokens: 2 }),
            })
        }
    }

    fn request(text: &str) -> ChatRequest {
        ChatRequest { model: "m".into(), messages: vec![ChatMessage::new("user", text)], temperature: 0.0, max_tokens: None }
    }

    #[test]
    fn decodes_openai_shape() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"hi"},"finish_reason":"length"}],"usage":{"prompt_tokens":5,"completion_tokens":1,"total_tokens":6}}"#;
        let r = decode_response(body).unwrap();
        assert_eq!(r.content, "hi");
        assert!(r.truncated());
        assert_eq!(r.usage, Some(Usage { prompt_tokens: 5, completion_tokens: 1 }));
        assert!(matches!(decode_response(r#"{"choices":[]}"#), Err(ChatError::Shape(_))));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let rec = ReplayCache::recording(dir.path(), Box::new(Counting(calls.clone())));
        let a = rec.complete(&request("a")).unwrap();
        let again = rec.complete(&request("a")).unwrap();
        assert_eq!(a, again);
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let replay = ReplayCache::replay_only(dir.path());
        assert_eq!(replay.complete(&request("a")).unwrap(), a);
        assert!(matches!(replay.complete(&request("b")), Err(ChatError::CacheMiss(_))));
    }

    #[test]
    fn key_depends_on_every_field() {
        let base = request("a");
        let mut warmer = base.clone();
        warmer.temperature = 0.5;
        assert_ne!(request_key(&base), request_key(&warmer));
        assert_ne!(request_key(&base), request_key(&request("b")));
        assert_eq!(request_key(&base), request_key(&request("a")));
    }

    #[test]
    fn concurrent_writers_leave_a_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::replay_only(dir.path());
        let resp = ChatResponse { content: "x".repeat(10_000), finish_reason: None, usage: None };
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.store(&request("k"), &resp).unwrap());
            }
        });
        assert_eq!(cache.complete(&request("k")).unwrap(), resp);
    }
}
