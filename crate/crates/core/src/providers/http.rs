//! OpenAI-compatible chat-completions client (blocking).

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRequest, ChatVlm, ContentPart, ProviderError};
use crate::raster::encode_for_transport;

pub const ENV_API_KEY: &str = "SANDBOX3D_API_KEY";
pub const ENV_API_KEY_FALLBACK: &str = "OPENAI_API_KEY";
pub const ENV_BASE_URL: &str = "SANDBOX3D_BASE_URL";
pub const ENV_MODEL: &str = "SANDBOX3D_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpVlmConfig {
    pub base_url: String,
    pub model: String,
    /// Bearer token; never serialized back out.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// First backoff delay; doubles on every retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpVlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key: None,
            timeout_s: 120.0,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 2,
        }
    }
}

impl HttpVlmConfig {
    /// Fills key, base URL and model from the environment where set.
    pub fn with_env(mut self) -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(k) = var(ENV_API_KEY).or_else(|| var(ENV_API_KEY_FALLBACK)) {
            self.api_key = Some(k);
        }
        if let Some(u) = var(ENV_BASE_URL) {
            self.base_url = u;
        }
        if let Some(m) = var(ENV_MODEL) {
            self.model = m;
        }
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct HttpVlm {
    config: HttpVlmConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpVlm {
    pub fn new(config: HttpVlmConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            // a redirect could carry the bearer token to another host
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .map_err(|e| ProviderError::Config(format!("http client: {e}")))?;
        Ok(Self {
            gate: Gate::new(config.max_in_flight),
            config,
            client,
        })
    }

    pub fn config(&self) -> &HttpVlmConfig {
        &self.config
    }

    /// JSON request body for `request`.
    pub fn request_body(&self, request: &ChatRequest) -> Value {
        request_body(&self.config.model, request)
    }

    fn send_once(&self, body: &str) -> Result<(u16, String), ProviderError> {
        let mut req = self
            .client
            .post(self.config.endpoint())
            .header("Content-Type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok((status, text))
    }
}

pub fn request_body(model: &str, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .turns
        .iter()
        .map(|t| {
            let content: Vec<Value> = t
                .parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text(s) => json!({"type": "text", "text": s}),
                    ContentPart::Image(r) => {
                        let (mime, bytes) = encode_for_transport(r);
                        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                        json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{b64}")}})
                    }
                })
                .collect();
            json!({"role": t.role, "content": content})
        })
        .collect();
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": request.decode.temperature,
    });
    if let Some(m) = request.decode.max_tokens {
        body["max_tokens"] = json!(m);
    }
    body
}

/// Assistant text of a chat-completions response body.
pub fn response_text(body: &str) -> Result<String, ProviderError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(ProviderError::Malformed("no choices[0].message.content".into())),
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl ChatVlm for HttpVlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = self.request_body(request).to_string();
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            let outcome = self.send_once(&body);
            let last = attempt >= self.config.max_retries;
            match outcome {
                Ok((status, text)) if (200..300).contains(&status) => return response_text(&text),
                Ok((status, text)) if !retryable(status) || last => {
                    return Err(ProviderError::Http { status, body: text })
                }
                Err(e) if last => return Err(e),
                Ok((status, _)) => log::warn!("chat request got {status}; retry {}", attempt + 1),
                Err(e) => log::warn!("chat request failed ({e}); retry {}", attempt + 1),
            }
            std::thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt));
            attempt += 1;
        }
    }
}
