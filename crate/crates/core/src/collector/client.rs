//! Minimal OpenAI-compatible chat-completion client with pacing.

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::ImageEntry;

/// How the image is attached to a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTransport {
    /// URL if the manifest has one, else base64 of the local file, else no image.
    #[default]
    Auto,
    Url,
    Base64,
    /// A `file://` URL for servers that share the filesystem.
    Path,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "one")]
    pub max_parallel: usize,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "unit")]
    pub temperature: f64,
    #[serde(default = "unit")]
    pub top_p: f64,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub image_transport: ImageTransport,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_rpm() -> u32 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_timeout() -> u64 {
    120
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            max_parallel: one(),
            requests_per_minute: default_rpm(),
            max_retries: default_retries(),
            temperature: unit(),
            top_p: unit(),
            retry_backoff_ms: default_backoff(),
            timeout_secs: default_timeout(),
            image_transport: ImageTransport::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(Error::Validation(format!("{}: max_parallel must be positive", self.model_name)));
        }
        if self.requests_per_minute == 0 {
            return Err(Error::Validation(format!(
                "{}: requests_per_minute must be positive",
                self.model_name
            )));
        }
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return Err(Error::Validation(format!("{}: base_url must be http(s)", self.model_name)));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Spaces request start times at least `60 / rpm` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(60.0 / rpm as f64),
            next: Mutex::new(Instant::now()),
        }
    }

    /// Blocks until this caller's slot.
    pub fn acquire(&self) {
        let slot = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

/// Resolves the `image_url` value for a request, if an image is sent at all.
pub fn image_payload(image: &ImageEntry, transport: ImageTransport) -> Result<Option<String>> {
    let base64_of = |path: &Path| -> Result<String> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(format!(
            "data:{};base64,{}",
            mime_for(path),
            base64::engine::general_purpose::STANDARD.encode(bytes)
        ))
    };
    let missing = |what: &str| Error::Validation(format!("image `{}` has no {what}", image.image_id));
    match transport {
        ImageTransport::None => Ok(None),
        ImageTransport::Url => image.url.clone().map(Some).ok_or_else(|| missing("url")),
        ImageTransport::Base64 => base64_of(image.path.as_deref().ok_or_else(|| missing("path"))?).map(Some),
        ImageTransport::Path => {
            let path = image.path.as_deref().ok_or_else(|| missing("path"))?;
            let abs = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
            Ok(Some(format!("file://{}", abs.display())))
        }
        ImageTransport::Auto => match (&image.url, &image.path) {
            (Some(url), _) => Ok(Some(url.clone())),
            (None, Some(path)) => base64_of(path).map(Some),
            (None, None) => Ok(None),
        },
    }
}

/// Builds the chat-completion request body.
pub fn request_body(config: &EndpointConfig, prompt: &str, image_url: Option<&str>) -> Value {
    let mut content = vec![json!({"type": "text", "text": prompt})];
    if let Some(url) = image_url {
        content.push(json!({"type": "image_url", "image_url": {"url": url}}));
    }
    json!({
        "model": config.model_name,
        "messages": [{"role": "user", "content": content}],
        "temperature": config.temperature,
        "top_p": config.top_p,
    })
}

/// Pulls `choices[0].message.content` out of a response, accepting either a
/// string or a list of text parts.
pub fn response_text(body: &Value) -> Result<String> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| Error::Transport("response has no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(Error::Transport(format!("unexpected content type: {other}"))),
    }
}

/// One endpoint: agent, pacing, and credentials.
pub struct ChatClient {
    pub config: EndpointConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    api_key: Option<String>,
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(v) => Some(v),
                Err(_) => {
                    log::warn!("{}: environment variable {var} is not set; sending no credentials", config.model_name);
                    None
                }
            },
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(ChatClient {
            limiter: RateLimiter::per_minute(config.requests_per_minute),
            config,
            agent,
            api_key,
        })
    }

    /// Sends one request and returns the reply text.
    pub fn complete(&self, prompt: &str, image_url: Option<&str>) -> Result<String> {
        self.limiter.acquire();
        let body = request_body(&self.config, prompt, image_url);
        let mut req = self.agent.post(&self.config.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Transport(format!("{}: {e}", self.config.model_name)))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Error::Transport(format!(
                "{}: HTTP {status}: {}",
                self.config.model_name,
                text.chars().take(200).collect::<String>()
            )));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("{}: bad JSON body: {e}", self.config.model_name)))?;
        response_text(&value)
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.config.retry_backoff_ms.saturating_mul(1 << attempt.min(6)))
    }
}
