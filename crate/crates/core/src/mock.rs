//! Deterministic stand-ins for the chat and video-QA endpoints.
//!
//! [`ScriptedBackend`] answers in-process; [`MockServer`] speaks the same
//! chat-completion HTTP protocol on a local port so the real client can be
//! exercised end to end.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decomposer::{
    ChatBackend, ChatMessage, EndpointError, MessageContent, ContentPart, QaBackend, VisualContext,
};

/// Scripted responses. QA prompts are matched first exactly, then by their last line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    /// Raw reply of the decomposition model.
    pub decomposition: String,
    /// QA replies keyed by prompt (or by the prompt's last line).
    pub answers: BTreeMap<String, String>,
    /// QA prompts (or last lines) that fail with HTTP 500.
    pub fail: Vec<String>,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            decomposition: r#"["What happens at the start of the video?", "How does the scene change over time?"]"#
                .to_string(),
            answers: BTreeMap::new(),
            fail: Vec::new(),
        }
    }
}

impl MockScript {
    fn matches<'a>(&self, keys: impl IntoIterator<Item = &'a String>, prompt: &str) -> Option<&'a String> {
        let last = prompt.lines().last().unwrap_or("");
        let keys: Vec<&String> = keys.into_iter().collect();
        keys.iter()
            .find(|k| k.as_str() == prompt)
            .or_else(|| keys.iter().find(|k| k.as_str() == last))
            .copied()
    }

    /// Reply for one QA prompt.
    pub fn qa_reply(&self, prompt: &str) -> Result<String, EndpointError> {
        if self.matches(&self.fail, prompt).is_some() {
            return Err(EndpointError::Status {
                status: 500,
                body: "scripted failure".into(),
            });
        }
        Ok(match self.matches(self.answers.keys(), prompt) {
            Some(k) => self.answers[k].clone(),
            None => format!("echo: {prompt}"),
        })
    }
}

/// In-process backend that serves both roles and records every prompt.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    script: MockScript,
    chat_log: Mutex<Vec<String>>,
    qa_log: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            ..Self::default()
        }
    }

    pub fn chat_prompts(&self) -> Vec<String> {
        self.chat_log.lock().unwrap().clone()
    }

    /// QA prompts in call order.
    pub fn qa_prompts(&self) -> Vec<String> {
        self.qa_log.lock().unwrap().clone()
    }
}

/// Concatenated text of the last message.
pub fn message_text(message: &ChatMessage) -> String {
    match &message.content {
        MessageContent::Text(t) => t.clone(),
        MessageContent::Parts(parts) => parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::ImageUrl { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, EndpointError> {
        let prompt = messages.last().map(message_text).unwrap_or_default();
        self.chat_log.lock().unwrap().push(prompt);
        Ok(self.script.decomposition.clone())
    }
}

impl QaBackend for ScriptedBackend {
    fn answer(&self, prompt: &str, _visual: &VisualContext) -> Result<String, EndpointError> {
        self.qa_log.lock().unwrap().push(prompt.to_string());
        self.script.qa_reply(prompt)
    }
}

/// How the mock server answers one request.
#[derive(Clone, Debug)]
pub enum MockReply {
    Content(String),
    Status(u16, String),
    /// Wait, then send the inner reply (used to trigger client timeouts).
    Delay(Duration, Box<MockReply>),
}

type Responder = dyn Fn(&Value) -> MockReply + Send + Sync;

/// Minimal HTTP/1.1 chat-completion server on `127.0.0.1`, one thread per connection.
pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<Value>>>,
    shutdown: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(responder: impl Fn(&Value) -> MockReply + Send + Sync + 'static) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let responder: Arc<Responder> = Arc::new(responder);

        let (reqs, stop) = (requests.clone(), shutdown.clone());
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (reqs, responder) = (reqs.clone(), responder.clone());
                thread::spawn(move || {
                    if let Err(e) = serve(stream, &reqs, responder.as_ref()) {
                        log::debug!("mock server connection: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            requests,
            shutdown,
            accept: Some(accept),
        })
    }

    /// Serves the scripted decomposition reply to every request.
    pub fn scripted_chat(script: MockScript) -> io::Result<Self> {
        Self::start(move |_| MockReply::Content(script.decomposition.clone()))
    }

    /// Serves scripted QA replies keyed on the text of the last message.
    pub fn scripted_qa(script: MockScript) -> io::Result<Self> {
        Self::start(move |req| match script.qa_reply(&request_text(req)) {
            Ok(text) => MockReply::Content(text),
            Err(_) => MockReply::Status(500, "scripted failure".into()),
        })
    }

    /// `http://127.0.0.1:<port>/v1`
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Parsed JSON bodies of every request received so far.
    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Text parts of the last message in a chat-completion request body.
pub fn request_text(req: &Value) -> String {
    let Some(content) = req["messages"].as_array().and_then(|m| m.last()).map(|m| &m["content"]) else {
        return String::new();
    };
    match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter(|p| p["type"] == "text")
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}

fn serve(stream: TcpStream, requests: &Mutex<Vec<Value>>, responder: &Responder) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        return Ok(());
    }
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let json: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let mut reply = responder(&json);
    requests.lock().unwrap().push(json);

    while let MockReply::Delay(d, inner) = reply {
        thread::sleep(d);
        reply = *inner;
    }
    let (status, payload) = match reply {
        MockReply::Content(text) => (
            200,
            json!({
                "id": "mock",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
            })
            .to_string(),
        ),
        MockReply::Status(code, msg) => (code, json!({"error": {"message": msg}}).to_string()),
        MockReply::Delay(..) => unreachable!("delays are unwrapped above"),
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        if status == 200 { "OK" } else { "Error" },
        payload.len()
    )?;
    stream.flush()
}
