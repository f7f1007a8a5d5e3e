//! OpenAI-compatible chat-completion client and the backend traits the
//! orchestrator is written against.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

pub const API_KEY_ENV: &str = "DCODE_API_KEY";

#[derive(Debug, Clone, thiserror::Error)]
pub enum EndpointError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

impl EndpointError {
    fn retryable(&self) -> bool {
        match self {
            EndpointError::Timeout | EndpointError::Transport(_) => true,
            EndpointError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatEndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl fmt::Debug for ChatEndpointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatEndpointConfig")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("backoff_ms", &self.backoff_ms)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ChatEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            temperature: 0.5,
            timeout_secs: 60.0,
            max_retries: 2,
            backoff_ms: 250,
            api_key: None,
        }
    }

    /// Fills `api_key` from `DCODE_API_KEY` when set.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(EndpointError::Config(format!(
                "temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(EndpointError::Config("timeout must be positive".into()));
        }
        if self.base_url.is_empty() {
            return Err(EndpointError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: MessageContent::Text(text.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// One selected frame encoded as an image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameImage {
    pub frame_index: usize,
    pub mime: String,
    pub data: Vec<u8>,
}

impl FrameImage {
    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

/// What every video-QA call is conditioned on: the selected frames.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VisualContext {
    pub frame_indices: Vec<usize>,
    pub images: Vec<FrameImage>,
}

fn image_mime(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some("image/png"),
        "jpg" | "jpeg" => Some("image/jpeg"),
        "webp" => Some("image/webp"),
        _ => None,
    }
}

impl VisualContext {
    /// Frames without images (the QA backend then sees only text).
    pub fn indices_only(frame_indices: &[usize]) -> Self {
        Self {
            frame_indices: frame_indices.to_vec(),
            images: Vec::new(),
        }
    }

    /// Loads the images for `selected` from `dir`. Image files (png/jpg/webp)
    /// sorted by file name are taken to be frames `0..T` in order.
    pub fn from_frames_dir(dir: impl AsRef<Path>, selected: &[usize]) -> io::Result<Self> {
        let mut files: Vec<_> = fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && image_mime(p).is_some())
            .collect();
        files.sort();
        let images = selected
            .iter()
            .map(|&i| {
                let path = files.get(i).ok_or_else(|| {
                    io::Error::new(
                        io::ErrorKind::NotFound,
                        format!("no image for frame {i}: {} image file(s) in directory", files.len()),
                    )
                })?;
                Ok(FrameImage {
                    frame_index: i,
                    mime: image_mime(path).unwrap_or("application/octet-stream").to_string(),
                    data: fs::read(path)?,
                })
            })
            .collect::<io::Result<Vec<_>>>()?;
        Ok(Self {
            frame_indices: selected.to_vec(),
            images,
        })
    }

    /// A user message with every frame image followed by the text prompt.
    pub fn message(&self, prompt: &str) -> ChatMessage {
        if self.images.is_empty() {
            return ChatMessage::user(prompt);
        }
        let mut parts: Vec<ContentPart> = self
            .images
            .iter()
            .map(|img| ContentPart::ImageUrl {
                image_url: ImageUrl { url: img.data_url() },
            })
            .collect();
        parts.push(ContentPart::Text {
            text: prompt.to_string(),
        });
        ChatMessage {
            role: "user".into(),
            content: MessageContent::Parts(parts),
        }
    }
}

/// Text-only chat completion, used for question decomposition.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, EndpointError>;
}

/// Video question answering conditioned on the selected frames.
pub trait QaBackend: Send + Sync {
    fn answer(&self, prompt: &str, visual: &VisualContext) -> Result<String, EndpointError>;
}

/// Blocking HTTP client with exponential-backoff retries.
pub struct HttpChatClient {
    config: ChatEndpointConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: ChatEndpointConfig) -> Result<Self, EndpointError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| EndpointError::Config(e.to_string()))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &ChatEndpointConfig {
        &self.config
    }

    fn send_once(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, EndpointError> {
        let body = CompletionRequest {
            model: &self.config.model,
            messages,
            temperature,
        };
        let mut req = self.http.post(self.config.completions_url()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(map_reqwest)?;
        let status = resp.status();
        let text = resp.text().map_err(map_reqwest)?;
        if !status.is_success() {
            return Err(EndpointError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| EndpointError::InvalidResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| EndpointError::InvalidResponse("no message content in choices".into()))
    }

    fn send(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, EndpointError> {
        let mut attempt = 0;
        loop {
            match self.send_once(messages, temperature) {
                Err(e) if e.retryable() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("{} failed ({e}); retry {} in {delay} ms", self.config.base_url, attempt + 1);
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn map_reqwest(e: reqwest::Error) -> EndpointError {
    if e.is_timeout() {
        EndpointError::Timeout
    } else {
        EndpointError::Transport(e.to_string())
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, EndpointError> {
        self.send(messages, temperature)
    }
}

impl QaBackend for HttpChatClient {
    fn answer(&self, prompt: &str, visual: &VisualContext) -> Result<String, EndpointError> {
        self.send(&[visual.message(prompt)], self.config.temperature)
    }
}
