//! Blocking HTTP client for OpenAI-compatible servers and Ollama.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, ChatResponse, LlmError, TokenBucket, Usage};

pub const API_KEY_ENV: &str = "LLM_API_KEY";

const BODY_EXCERPT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    /// `POST {base}/v1/chat/completions`
    #[serde(alias = "openai")]
    OpenAi,
    /// `POST {base}/api/chat`
    Ollama,
}

impl Dialect {
    pub fn path(&self) -> &'static str {
        match self {
            Self::OpenAi => "/v1/chat/completions",
            Self::Ollama => "/api/chat",
        }
    }

    pub fn default_temperature(&self) -> f64 {
        match self {
            Self::OpenAi => 0.7,
            Self::Ollama => 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub name: String,
    pub dialect: Dialect,
    pub base_url: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub requests_per_minute: Option<f64>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First backoff delay in seconds, doubled on each retry.
    #[serde(default = "default_backoff")]
    pub backoff_secs: f64,
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> f64 {
    1.0
}

impl HttpConfig {
    pub fn new(name: impl Into<String>, dialect: Dialect, base_url: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            dialect,
            base_url: base_url.into(),
            temperature: None,
            requests_per_minute: None,
            max_retries: default_retries(),
            backoff_secs: default_backoff(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    bucket: Option<TokenBucket>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl HttpBackend {
    /// Reads the API key from `LLM_API_KEY` if present.
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: HttpConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let bucket = config.requests_per_minute.map(|rpm| TokenBucket::new(rpm, 1.0));
        Ok(Self {
            config,
            client,
            api_key,
            bucket,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!(
            "{}{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.dialect.path()
        )
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system_prompt {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user_message}));
        match self.config.dialect {
            Dialect::OpenAi => {
                let mut body = json!({
                    "model": request.model,
                    "messages": messages,
                    "temperature": request.temperature,
                });
                if let Some(n) = request.max_tokens {
                    body["max_tokens"] = json!(n);
                }
                body
            }
            Dialect::Ollama => {
                let mut options = json!({"temperature": request.temperature});
                if let Some(n) = request.max_tokens {
                    options["num_predict"] = json!(n);
                }
                json!({
                    "model": request.model,
                    "messages": messages,
                    "stream": false,
                    "options": options,
                })
            }
        }
    }

    fn extract(&self, reply: &Value) -> Result<(String, Option<Usage>), LlmError> {
        let (text, usage) = match self.config.dialect {
            Dialect::OpenAi => {
                let text = reply.pointer("/choices/0/message/content").and_then(Value::as_str);
                let usage = reply.get("usage").and_then(|u| {
                    Some(Usage {
                        prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                        completion_tokens: u.get("completion_tokens")?.as_u64()?,
                    })
                });
                (text, usage)
            }
            Dialect::Ollama => {
                let text = reply.pointer("/message/content").and_then(Value::as_str);
                let usage = (|| {
                    Some(Usage {
                        prompt_tokens: reply.get("prompt_eval_count")?.as_u64()?,
                        completion_tokens: reply.get("eval_count")?.as_u64()?,
                    })
                })();
                (text, usage)
            }
        };
        let text = text.ok_or_else(|| LlmError::Malformed("reply carries no message content".into()))?;
        Ok((text.trim().to_string(), usage))
    }

    fn attempt(&self, request: &ChatRequest) -> Result<(String, Option<Usage>), LlmError> {
        let mut builder = self
            .client
            .post(self.url())
            .timeout(request.timeout_duration())
            .json(&self.body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(map_reqwest)?;
        let status = response.status();
        let text = response.text().map_err(map_reqwest)?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(LlmError::Auth(format!("status {}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(LlmError::Status {
                code: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT).collect(),
            });
        }
        let reply: Value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        self.extract(&reply)
    }
}

fn map_reqwest(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout(e.to_string())
    } else if e.is_decode() {
        LlmError::Malformed(e.to_string())
    } else {
        LlmError::Transport(e.to_string())
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.name
    }

    fn default_temperature(&self) -> f64 {
        self.config
            .temperature
            .unwrap_or(self.config.dialect.default_temperature())
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            if let Some(bucket) = &self.bucket {
                bucket.acquire();
            }
            let started = Instant::now();
            match self.attempt(request) {
                Ok((text, usage)) => {
                    return Ok(ChatResponse {
                        text,
                        usage,
                        latency: started.elapsed().as_secs_f64(),
                        backend: self.config.name.clone(),
                    })
                }
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_secs * 2f64.powi(attempt as i32);
                    std::thread::sleep(Duration::from_secs_f64(delay.max(0.0)));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    struct Canned {
        status: u16,
        body: String,
        delay_ms: u64,
    }

    fn canned(status: u16, body: &str) -> Canned {
        Canned {
            status,
            body: body.to_string(),
            delay_ms: 0,
        }
    }

    /// Serves one canned reply per connection and forwards each request as
    /// (request line + headers, body).
    fn serve(replies: Vec<Canned>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for reply in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    head.push_str(&line);
                }
                let mut body = vec![0u8; length];
                let _ = reader.read_exact(&mut body);
                let _ = tx.send((head, String::from_utf8_lossy(&body).into_owned()));
                std::thread::sleep(Duration::from_millis(reply.delay_ms));
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    reply.status,
                    reply.body.len(),
                    reply.body
                );
            }
        });
        (addr, rx)
    }

    fn backend(addr: &str, dialect: Dialect, key: Option<&str>) -> HttpBackend {
        let mut config = HttpConfig::new("test", dialect, addr);
        config.backoff_secs = 0.01;
        HttpBackend::with_api_key(config, key.map(String::from)).unwrap()
    }

    fn request() -> ChatRequest {
        let mut r = ChatRequest::new("gpt-x", "propose", 0.7);
        r.system_prompt = Some("be brief".into());
        r
    }

    const OPENAI_OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"  hello \n"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;

    #[test]
    fn openai_round_trip() {
        let (addr, rx) = serve(vec![canned(200, OPENAI_OK)]);
        let b = backend(&addr, Dialect::OpenAi, Some("sk-test"));
        let r = b.chat(&request()).unwrap();
        assert_eq!(r.text, "hello");
        assert_eq!(
            r.usage,
            Some(Usage {
                prompt_tokens: 12,
                completion_tokens: 3
            })
        );
        let (head, body) = rx.recv().unwrap();
        assert!(head.starts_with("POST /v1/chat/completions"));
        assert!(head.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let body: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "propose");
    }

    #[test]
    fn ollama_round_trip_without_usage() {
        let (addr, rx) = serve(vec![canned(200, r#"{"message":{"role":"assistant","content":"ok"}}"#)]);
        let b = backend(&addr, Dialect::Ollama, None);
        let r = b.chat(&request()).unwrap();
        assert_eq!((r.text.as_str(), r.usage), ("ok", None));
        let (head, body) = rx.recv().unwrap();
        assert!(head.starts_with("POST /api/chat"));
        assert!(!head.to_ascii_lowercase().contains("authorization"));
        let body: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(body["stream"], false);
        assert_eq!(body["options"]["temperature"], 0.7);
    }

    #[test]
    fn default_temperatures_follow_dialect() {
        assert_eq!(backend("http://x", Dialect::OpenAi, None).default_temperature(), 0.7);
        assert_eq!(backend("http://x", Dialect::Ollama, None).default_temperature(), 0.8);
    }

    #[test]
    fn server_errors_are_retried() {
        let (addr, rx) = serve(vec![canned(503, "busy"), canned(500, "oops"), canned(200, OPENAI_OK)]);
        let b = backend(&addr, Dialect::OpenAi, None);
        assert_eq!(b.chat(&request()).unwrap().text, "hello");
        assert_eq!(rx.try_iter().count(), 3);
    }

    #[test]
    fn retries_are_bounded() {
        let (addr, rx) = serve((0..4).map(|_| canned(502, "down")).collect());
        let b = backend(&addr, Dialect::OpenAi, None);
        assert!(matches!(b.chat(&request()), Err(LlmError::Status { code: 502, .. })));
        assert_eq!(rx.try_iter().count(), 3);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (addr, rx) = serve(vec![canned(401, "no"), canned(200, OPENAI_OK)]);
        let b = backend(&addr, Dialect::OpenAi, Some("bad"));
        assert!(matches!(b.chat(&request()), Err(LlmError::Auth(_))));
        assert_eq!(rx.try_iter().count(), 1);
    }

    #[test]
    fn malformed_reply_is_distinct() {
        let (addr, _rx) = serve(vec![canned(200, "{not json"), canned(200, r#"{"choices":[]}"#)]);
        let b = backend(&addr, Dialect::OpenAi, None);
        assert!(matches!(b.chat(&request()), Err(LlmError::Malformed(_))));
        assert!(matches!(b.chat(&request()), Err(LlmError::Malformed(_))));
    }

    #[test]
    fn slow_server_times_out() {
        let slow = || Canned {
            status: 200,
            body: OPENAI_OK.into(),
            delay_ms: 1500,
        };
        let (addr, _rx) = serve(vec![slow(), slow(), slow()]);
        let b = backend(&addr, Dialect::OpenAi, None);
        let mut r = request();
        r.timeout = 0.2;
        assert!(matches!(b.chat(&r), Err(LlmError::Timeout(_))));
    }

    #[test]
    fn refused_connection_is_transport() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let b = backend(&format!("http://127.0.0.1:{port}"), Dialect::OpenAi, None);
        assert!(matches!(b.chat(&request()), Err(LlmError::Transport(_))));
    }

    #[test]
    fn empty_message_never_reaches_the_network() {
        let b = backend("http://127.0.0.1:9", Dialect::OpenAi, None);
        assert_eq!(b.chat(&ChatRequest::new("m", "", 0.7)), Err(LlmError::EmptyMessage));
    }

    #[test]
    fn config_parses_from_toml() {
        let c: HttpConfig = toml::from_str(
            "name = \"local\"\ndialect = \"ollama\"\nbase_url = \"http://localhost:11434\"\nrequests_per_minute = 30.0",
        )
        .unwrap();
        assert_eq!(c.max_retries, 2);
        assert_eq!(c.requests_per_minute, Some(30.0));
    }
}
