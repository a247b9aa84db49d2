//! Chat-completion backends behind one uniform interface.
//!
//! Two kinds are provided: an HTTP client for OpenAI-compatible
//! `/chat/completions` endpoints with retry/backoff, and a deterministic
//! scripted backend that answers by request tag for tests and fixtures.
//! Every attempt (success or failure) is appended to an [`AuditLog`], so a
//! trial can be reconstructed from the log alone.

use chrono::{DateTime, Utc};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error{}: {message}", .status.map(|s| format!(" (http {s})")).unwrap_or_default())]
    Protocol { status: Option<u16>, message: String },
    #[error("no scripted response for request tag {request_tag:?}")]
    ScriptExhausted { request_tag: String },
    #[error("authentication rejected{}", .status.map(|s| format!(" (http {s})")).unwrap_or_default())]
    Auth { status: Option<u16> },
    #[error("malformed script: {0}")]
    MalformedScript(String),
    #[error("duplicate script tag {tag:?}")]
    DuplicateTag { tag: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("audit log write failed: {0}")]
    AuditIo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

/// One message of a chat exchange. `author_name` carries the agent display
/// name so multi-party turns stay attributed on the wire and in the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_name: Option<String>,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            author_name: None,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            author_name: None,
            content: content.into(),
        }
    }

    pub fn user_named(name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            author_name: Some(name.into()),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            author_name: None,
            content: content.into(),
        }
    }
}

/// A fully assembled completion request. The `request_tag`
/// (`{scenario}/t{trial}/turn{turn}`) keys both audit records and scripted
/// lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages is empty".into()));
        }
        if self.messages[0].role != ChatRole::System {
            return Err(GatewayError::InvalidRequest(
                "first message must have role system".into(),
            ));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role != ChatRole::Assistant && m.content.is_empty() {
                return Err(GatewayError::InvalidRequest(format!(
                    "messages[{i}] has empty content"
                )));
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be a non-negative real".into(),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Retry policy for transient HTTP failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            backoff_multiplier: 2.0,
        }
    }
}

/// How to reach a backend. `build` turns the descriptor into a live backend.
#[derive(Debug, Clone)]
pub enum BackendDescriptor {
    Http {
        base_url: String,
        retry: RetryPolicy,
        timeout: Duration,
    },
    Scripted { script_path: PathBuf },
}

impl BackendDescriptor {
    pub fn http(base_url: impl Into<String>) -> Self {
        BackendDescriptor::Http {
            base_url: base_url.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
        }
    }

    pub fn scripted(script_path: impl Into<PathBuf>) -> Self {
        BackendDescriptor::Scripted {
            script_path: script_path.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackendDescriptor::Http { .. } => "http",
            BackendDescriptor::Scripted { .. } => "scripted",
        }
    }

    /// Instantiate the backend. For the HTTP kind the bearer token is read
    /// from `LLM_API_KEY`.
    pub fn build(&self) -> Result<Box<dyn ChatBackend>, GatewayError> {
        match self {
            BackendDescriptor::Http {
                base_url,
                retry,
                timeout,
            } => {
                if retry.max_attempts == 0 {
                    return Err(GatewayError::InvalidRequest(
                        "retry policy needs max_attempts >= 1".into(),
                    ));
                }
                let api_key = std::env::var("LLM_API_KEY")
                    .map_err(|_| GatewayError::Auth { status: None })?;
                Ok(Box::new(HttpBackend::new(
                    base_url.clone(),
                    api_key,
                    retry.clone(),
                    *timeout,
                )?))
            }
            BackendDescriptor::Scripted { script_path } => {
                let bytes = std::fs::read(script_path).map_err(|e| {
                    GatewayError::MalformedScript(format!(
                        "cannot read {}: {e}",
                        script_path.display()
                    ))
                })?;
                Ok(Box::new(load_script(&bytes)?))
            }
        }
    }
}

/// One audit record per completion attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_tag: String,
    pub attempt: u32,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timestamp: DateTime<Utc>,
}

enum AuditSink {
    Disabled,
    Memory(Mutex<Vec<AuditRecord>>),
    File(Mutex<BufWriter<File>>),
}

/// Append-only, internally synchronized log of every backend attempt.
/// The file form writes JSON lines; the in-memory form backs tests and
/// audit-replay checks.
#[derive(Clone)]
pub struct AuditLog {
    sink: Arc<AuditSink>,
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match *self.sink {
            AuditSink::Disabled => "disabled",
            AuditSink::Memory(_) => "memory",
            AuditSink::File(_) => "file",
        };
        f.debug_struct("AuditLog").field("sink", &kind).finish()
    }
}

impl AuditLog {
    pub fn disabled() -> Self {
        Self {
            sink: Arc::new(AuditSink::Disabled),
        }
    }

    pub fn in_memory() -> Self {
        Self {
            sink: Arc::new(AuditSink::Memory(Mutex::new(Vec::new()))),
        }
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self {
            sink: Arc::new(AuditSink::File(Mutex::new(BufWriter::new(file)))),
        })
    }

    pub fn append(&self, record: AuditRecord) -> Result<(), GatewayError> {
        match &*self.sink {
            AuditSink::Disabled => Ok(()),
            AuditSink::Memory(records) => {
                records.lock().expect("audit lock").push(record);
                Ok(())
            }
            AuditSink::File(writer) => {
                let line = serde_json::to_string(&record)
                    .map_err(|e| GatewayError::AuditIo(e.to_string()))?;
                let mut writer = writer.lock().expect("audit lock");
                writeln!(writer, "{line}").map_err(|e| GatewayError::AuditIo(e.to_string()))?;
                writer
                    .flush()
                    .map_err(|e| GatewayError::AuditIo(e.to_string()))
            }
        }
    }

    /// Records captured so far (in-memory sink only; empty otherwise).
    pub fn records(&self) -> Vec<AuditRecord> {
        match &*self.sink {
            AuditSink::Memory(records) => records.lock().expect("audit lock").clone(),
            _ => Vec::new(),
        }
    }
}

/// Uniform completion interface shared by the HTTP and scripted kinds.
pub trait ChatBackend: Send + Sync {
    /// Produce exactly one assistant message for the request, appending one
    /// audit record per attempt.
    fn complete(
        &self,
        request: &ChatRequest,
        audit: &AuditLog,
    ) -> Result<ChatMessage, GatewayError>;
}

/// Deterministic backend answering by `request_tag` lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedBackend {
    responses: BTreeMap<String, String>,
}

impl ScriptedBackend {
    pub fn from_map(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }

    pub fn responses(&self) -> &BTreeMap<String, String> {
        &self.responses
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.responses).expect("script map serializes")
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        request: &ChatRequest,
        audit: &AuditLog,
    ) -> Result<ChatMessage, GatewayError> {
        request.validate()?;
        let result = self
            .responses
            .get(&request.request_tag)
            .map(|text| ChatMessage::assistant(text.clone()))
            .ok_or_else(|| GatewayError::ScriptExhausted {
                request_tag: request.request_tag.clone(),
            });
        audit.append(AuditRecord {
            request_tag: request.request_tag.clone(),
            attempt: 1,
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
            timestamp: Utc::now(),
        })?;
        result
    }
}

/// Parse a script file: a JSON object mapping request tags to response text.
/// Duplicate tags are rejected rather than silently collapsed.
pub fn load_script(raw_bytes: &[u8]) -> Result<ScriptedBackend, GatewayError> {
    let text = std::str::from_utf8(raw_bytes)
        .map_err(|e| GatewayError::MalformedScript(format!("not UTF-8: {e}")))?;
    let entries: ScriptEntries = serde_json::from_str(text)
        .map_err(|e| GatewayError::MalformedScript(e.to_string()))?;
    let mut responses = BTreeMap::new();
    for (tag, value) in entries.0 {
        if responses.insert(tag.clone(), value).is_some() {
            return Err(GatewayError::DuplicateTag { tag });
        }
    }
    Ok(ScriptedBackend { responses })
}

/// Raw `(tag, text)` pairs; unlike a map deserialization this sees duplicates.
struct ScriptEntries(Vec<(String, String)>);

impl<'de> Deserialize<'de> for ScriptEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = ScriptEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object mapping request tags to response text")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((tag, value)) = map.next_entry::<String, String>()? {
                    entries.push((tag, value));
                }
                Ok(ScriptEntries(entries))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

// --- HTTP backend (OpenAI-compatible chat completions) ---

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// `name` on the wire must stay within the provider's `[A-Za-z0-9_-]` grammar,
/// so display names are mangled here while transcripts keep the original.
fn wire_name(author: &str) -> String {
    author
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub struct HttpBackend {
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        base_url: String,
        api_key: String,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            retry,
            client,
        })
    }

    fn send_once(&self, request: &ChatRequest) -> Result<ChatMessage, GatewayError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        ChatRole::System => "system",
                        ChatRole::User => "user",
                        ChatRole::Assistant => "assistant",
                    },
                    name: m.author_name.as_deref().map(wire_name),
                    content: &m.content,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let response = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::Auth {
                status: Some(status.as_u16()),
            });
        }
        if !status.is_success() {
            let detail = response.text().unwrap_or_default();
            return Err(GatewayError::Protocol {
                status: Some(status.as_u16()),
                message: truncate(&detail, 300),
            });
        }
        let parsed: WireResponse = response.json().map_err(|e| GatewayError::Protocol {
            status: None,
            message: format!("invalid response body: {e}"),
        })?;
        let choice = parsed.choices.into_iter().next().ok_or(GatewayError::Protocol {
            status: None,
            message: "response carries no choices".into(),
        })?;
        Ok(ChatMessage::assistant(choice.message.content.unwrap_or_default()))
    }
}

fn truncate(s: &str, limit: usize) -> String {
    if s.len() <= limit {
        s.to_string()
    } else {
        let mut end = limit;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

/// Transient failures are retried per policy; auth and protocol failures
/// surface immediately.
fn is_transient(err: &GatewayError) -> bool {
    match err {
        GatewayError::Transport { .. } => true,
        GatewayError::Protocol { status: Some(s), .. } => *s == 429 || *s >= 500,
        _ => false,
    }
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        request: &ChatRequest,
        audit: &AuditLog,
    ) -> Result<ChatMessage, GatewayError> {
        request.validate()?;
        let mut backoff = self.retry.base_backoff;
        let mut last_err = None;
        for attempt in 1..=self.retry.max_attempts {
            let result = self.send_once(request);
            audit.append(AuditRecord {
                request_tag: request.request_tag.clone(),
                attempt,
                request: request.clone(),
                response: result.as_ref().ok().cloned(),
                error: result.as_ref().err().map(|e| e.to_string()),
                timestamp: Utc::now(),
            })?;
            match result {
                Ok(message) => return Ok(message),
                Err(err) if is_transient(&err) && attempt < self.retry.max_attempts => {
                    last_err = Some(err);
                    std::thread::sleep(backoff);
                    backoff = backoff.mul_f64(self.retry.backoff_multiplier);
                }
                Err(err) => return Err(annotate_attempts(err, attempt)),
            }
        }
        Err(annotate_attempts(
            last_err.expect("at least one attempt"),
            self.retry.max_attempts,
        ))
    }
}

fn annotate_attempts(err: GatewayError, attempts: u32) -> GatewayError {
    match err {
        GatewayError::Transport { message, .. } => GatewayError::Transport { attempts, message },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(tag: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::system("You are a test."), ChatMessage::user("hi")],
            model_id: "gpt-4-turbo".into(),
            temperature: 1.0,
            max_output_tokens: 64,
            request_tag: tag.into(),
        }
    }

    #[test]
    fn scripted_backend_answers_by_tag_verbatim() {
        let backend = load_script(br#"{"case-1/t0/turn0": "Initial impression recorded."}"#).unwrap();
        let audit = AuditLog::in_memory();
        let msg = backend.complete(&request("case-1/t0/turn0"), &audit).unwrap();
        assert_eq!(msg.role, ChatRole::Assistant);
        assert_eq!(msg.content, "Initial impression recorded.");
        assert_eq!(audit.records().len(), 1);
        assert_eq!(audit.records()[0].response.as_ref().unwrap().content, msg.content);
    }

    #[test]
    fn scripted_backend_is_referentially_transparent() {
        let backend = load_script(br#"{"a": "x"}"#).unwrap();
        let audit = AuditLog::disabled();
        for _ in 0..3 {
            assert_eq!(backend.complete(&request("a"), &audit).unwrap().content, "x");
        }
    }

    #[test]
    fn unmapped_tag_is_script_exhausted() {
        let backend = load_script(br#"{"a": "x"}"#).unwrap();
        let err = backend
            .complete(&request("missing"), &AuditLog::disabled())
            .unwrap_err();
        match err {
            GatewayError::ScriptExhausted { request_tag } => assert_eq!(request_tag, "missing"),
            other => panic!("expected ScriptExhausted, got {other}"),
        }
    }

    #[test]
    fn empty_script_is_valid_and_always_exhausted() {
        let backend = load_script(b"{}").unwrap();
        assert!(backend
            .complete(&request("anything"), &AuditLog::disabled())
            .is_err());
    }

    #[test]
    fn duplicate_tag_is_rejected() {
        let err = load_script(br#"{"a": "x", "a": "y"}"#).unwrap_err();
        match err {
            GatewayError::DuplicateTag { tag } => assert_eq!(tag, "a"),
            other => panic!("expected DuplicateTag, got {other}"),
        }
    }

    #[test]
    fn malformed_script_is_rejected() {
        assert!(matches!(
            load_script(b"[1, 2]"),
            Err(GatewayError::MalformedScript(_))
        ));
        assert!(matches!(
            load_script(br#"{"a": 3}"#),
            Err(GatewayError::MalformedScript(_))
        ));
        assert!(matches!(
            load_script(b"{oops"),
            Err(GatewayError::MalformedScript(_))
        ));
    }

    #[test]
    fn request_validation_rejects_degenerate_requests() {
        let mut r = request("t");
        r.messages.clear();
        assert!(matches!(
            r.validate(),
            Err(GatewayError::InvalidRequest(_))
        ));

        let mut r = request("t");
        r.messages[0].role = ChatRole::User;
        assert!(r.validate().is_err());

        let mut r = request("t");
        r.temperature = -0.5;
        assert!(r.validate().is_err());

        let mut r = request("t");
        r.max_output_tokens = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn wire_name_mangles_spaces_only_on_the_wire() {
        assert_eq!(wire_name("Junior Resident I"), "Junior_Resident_I");
        assert_eq!(wire_name("agent-2_ok"), "agent-2_ok");
    }

    #[test]
    fn audit_record_jsonl_round_trips() {
        let record = AuditRecord {
            request_tag: "a/t0/turn0".into(),
            attempt: 2,
            request: request("a/t0/turn0"),
            response: Some(ChatMessage::assistant("ok")),
            error: None,
            timestamp: Utc::now(),
        };
        let line = serde_json::to_string(&record).unwrap();
        let back: AuditRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record);
    }
}
