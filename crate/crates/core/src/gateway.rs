//! Chat-completion gateway.
//!
//! Every model call in the pipeline goes through [`Gateway::complete`]. Two
//! backends sit behind it: a live HTTP backend speaking the chat-completions
//! wire format, and a replay backend that serves responses from a recorded
//! [`Transcript`]. Replay is sequential: the next unconsumed entry must carry
//! the fingerprint of the incoming request, so prompt drift and stage
//! reordering both surface as [`GatewayError::ReplayMiss`].

use std::collections::VecDeque;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the API key for the live backend.
pub const API_KEY_ENV: &str = "AUTORESEARCH_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    /// `None` means no limit is sent on the wire.
    pub max_output_tokens: Option<u32>,
}

impl ChatRequest {
    /// A single-user-message request at temperature 0 with no token limit.
    pub fn single_user(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_output_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical form of the request.
    ///
    /// The canonical form is a JSON document with a fixed field order, so the
    /// hash does not depend on how the request was built. Message contents
    /// are hashed as-is.
    pub fn fingerprint(&self) -> Fingerprint {
        #[derive(Serialize)]
        struct Canonical<'a> {
            model: &'a str,
            messages: Vec<(&'a str, &'a str)>,
            temperature: f64,
            max_output_tokens: Option<u32>,
        }
        let canonical = Canonical {
            model: &self.model,
            messages: self
                .messages
                .iter()
                .map(|m| (m.role.as_str(), m.content.as_str()))
                .collect(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        };
        let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
        Fingerprint(hex::encode(Sha256::digest(&bytes)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Verbatim model output.
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
    /// Not part of the transcript format; zero for replayed responses.
    #[serde(skip)]
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay miss at entry {index}: expected {expected}, got request {actual}")]
    ReplayMiss {
        index: usize,
        /// Fingerprint of the next recorded entry, or `<exhausted>`.
        expected: String,
        actual: Fingerprint,
    },
    #[error("wire error (status {status:?}): {body}")]
    WireError { status: Option<u16>, body: String },
    #[error("model stopped at the output token limit")]
    TokenLimit { response: ChatResponse },
    #[error("transcript parse error at line {line} (entry {entry_index}): {message}")]
    ParseError {
        line: usize,
        entry_index: usize,
        message: String,
    },
    #[error("transcript {0} has no entries")]
    EmptyTranscript(PathBuf),
    #[error("missing API key: set {API_KEY_ENV}")]
    MissingApiKey,
    #[error("transcript I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: Fingerprint,
    pub response: ChatResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    pub source_path: PathBuf,
}

/// Reads a newline-delimited JSON transcript. Blank lines are skipped.
pub fn load_transcript(path: impl AsRef<Path>) -> Result<Transcript, GatewayError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_transcript(&text, path)
}

pub fn parse_transcript(text: &str, source_path: &Path) -> Result<Transcript, GatewayError> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry =
            serde_json::from_str(line).map_err(|e| GatewayError::ParseError {
                line: lineno + 1,
                entry_index: entries.len(),
                message: e.to_string(),
            })?;
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(GatewayError::EmptyTranscript(source_path.to_path_buf()));
    }
    Ok(Transcript {
        entries,
        source_path: source_path.to_path_buf(),
    })
}

/// Anything that can turn a validated request into a response.
pub trait ChatBackend: Send {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Serves recorded responses in order, checking each request's fingerprint.
#[derive(Debug)]
pub struct ReplayBackend {
    pending: VecDeque<TranscriptEntry>,
    consumed: usize,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            pending: transcript.entries.into(),
            consumed: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.pending.len()
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let actual = request.fingerprint();
        match self.pending.front() {
            Some(entry) if entry.fingerprint == actual => {
                let entry = self.pending.pop_front().expect("front exists");
                self.consumed += 1;
                Ok(entry.response)
            }
            Some(entry) => Err(GatewayError::ReplayMiss {
                index: self.consumed,
                expected: entry.fingerprint.0.clone(),
                actual,
            }),
            None => Err(GatewayError::ReplayMiss {
                index: self.consumed,
                expected: "<exhausted>".into(),
                actual,
            }),
        }
    }
}

/// Returns canned response texts in order without checking fingerprints.
///
/// Used to author transcripts: wrap it in a recording [`Gateway`] and the
/// recorded file replays against the same pipeline.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    responses: VecDeque<String>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let content = self.responses.pop_front().ok_or_else(|| GatewayError::ReplayMiss {
            index: 0,
            expected: "<exhausted>".into(),
            actual: request.fingerprint(),
        })?;
        Ok(ChatResponse {
            content,
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
            latency_ms: 0,
        })
    }
}

/// Blocking chat-completions client.
pub struct LiveBackend {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiveBackend")
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl LiveBackend {
    /// `base_url` may or may not already end in `/chat/completions`.
    pub fn new(base_url: &str, api_key: impl Into<String>, timeout: Duration) -> Self {
        let trimmed = base_url.trim_end_matches('/');
        let endpoint = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        Self {
            endpoint,
            api_key: api_key.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn from_env(base_url: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(GatewayError::MissingApiKey)?;
        Ok(Self::new(base_url, key, timeout))
    }

    fn wire_body(request: &ChatRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(limit) = request.max_output_tokens {
            body["max_tokens"] = limit.into();
        }
        body
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

fn excerpt(body: &str) -> String {
    body.chars().take(500).collect()
}

impl ChatBackend for LiveBackend {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = Instant::now();
        let result = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(Self::wire_body(request));
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(GatewayError::WireError {
                    status: Some(status),
                    body: excerpt(&body),
                });
            }
            Err(e) => {
                return Err(GatewayError::WireError {
                    status: None,
                    body: excerpt(&e.to_string()),
                })
            }
        };
        let text = response.into_string().map_err(|e| GatewayError::WireError {
            status: None,
            body: excerpt(&e.to_string()),
        })?;
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::WireError {
                status: Some(200),
                body: excerpt(&format!("undecodable body ({e}): {text}")),
            })?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| GatewayError::WireError {
            status: Some(200),
            body: "response has no choices".into(),
        })?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        };
        Ok(ChatResponse {
            content: choice.message.content.unwrap_or_default(),
            finish_reason,
            usage: wire.usage.unwrap_or_default(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

/// Appends transcript entries to a file, one JSON line each, flushing per entry.
#[derive(Debug)]
pub struct TranscriptRecorder {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TranscriptRecorder {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|source| GatewayError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, entry: &TranscriptEntry) -> Result<(), GatewayError> {
        let line = serde_json::to_string(entry).expect("transcript entry serializes");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|source| GatewayError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Single entry point for model calls.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    recorder: Option<TranscriptRecorder>,
    require_zero_temperature: bool,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("recording", &self.recorder.is_some())
            .field("require_zero_temperature", &self.require_zero_temperature)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            recorder: None,
            require_zero_temperature: true,
        }
    }

    pub fn replay(transcript: Transcript) -> Self {
        Self::new(ReplayBackend::new(transcript))
    }

    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(ScriptedBackend::new(responses))
    }

    pub fn with_recorder(mut self, recorder: TranscriptRecorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    /// Allows callers outside the pipeline to send non-zero temperatures.
    pub fn allow_nonzero_temperature(mut self) -> Self {
        self.require_zero_temperature = false;
        self
    }

    pub fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        if self.require_zero_temperature && request.temperature != 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "pipeline requests must use temperature 0, got {}",
                request.temperature
            )));
        }
        let response = self.backend.send(request)?;
        if let Some(recorder) = self.recorder.as_mut() {
            recorder.append(&TranscriptEntry {
                fingerprint: request.fingerprint(),
                response: response.clone(),
            })?;
        }
        if response.finish_reason == FinishReason::Length {
            return Err(GatewayError::TokenLimit { response });
        }
        Ok(response)
    }
}
