//! Chat-completions client for the multimodal model.

use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::prompt::{ImagePayload, PromptBundle};
use super::{InvokeError, MllmConfig};

/// A model that turns a prompt into text.
pub trait Mllm: Send + Sync {
    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, InvokeError>;

    /// Best-effort reachability probe.
    fn reachable(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Number of HTTP attempts made, including the successful one.
    pub attempts: u32,
}

/// Renders the request body in the chat-completions wire format.
pub fn request_body(prompt: &PromptBundle, model: &str, temperature: f64) -> Value {
    let mut parts = vec![json!({"type": "text", "text": prompt.user})];
    for img in &prompt.images {
        parts.push(json!({"type": "text", "text": format!("Image: {}", img.label)}));
        let url = match &img.payload {
            ImagePayload::Inline { data_url, .. } => data_url,
            ImagePayload::Url { url } => url,
        };
        parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
    }
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": parts},
        ],
    })
}

/// Extracts the assistant text from a chat-completions response body.
pub fn response_text(body: &Value) -> Option<String> {
    let content = body.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

/// Bounds concurrent requests and their rate.
struct Throttle {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max_in_flight: usize,
    bucket: Mutex<Bucket>,
    rate: f64,
    burst: f64,
}

struct Bucket {
    tokens: f64,
    last: Instant,
}

struct Permit<'a>(&'a Throttle);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock() -= 1;
        self.0.freed.notify_one();
    }
}

impl Throttle {
    fn new(max_in_flight: usize, rate: f64) -> Self {
        let burst = rate.max(1.0);
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max_in_flight: max_in_flight.max(1),
            bucket: Mutex::new(Bucket { tokens: burst, last: Instant::now() }),
            rate,
            burst,
        }
    }

    fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock();
            while *n >= self.max_in_flight {
                self.freed.wait(&mut n);
            }
            *n += 1;
        }
        if self.rate > 0.0 {
            loop {
                let wait = {
                    let mut b = self.bucket.lock();
                    let now = Instant::now();
                    b.tokens = (b.tokens + now.duration_since(b.last).as_secs_f64() * self.rate).min(self.burst);
                    b.last = now;
                    if b.tokens >= 1.0 {
                        b.tokens -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - b.tokens) / self.rate))
                    }
                };
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        Permit(self)
    }
}

/// HTTP client with bounded retries and exponential backoff.
pub struct HttpMllm {
    config: MllmConfig,
    api_key: Option<String>,
    http: Client,
    throttle: Throttle,
}

impl HttpMllm {
    pub fn new(config: MllmConfig) -> Result<Self, InvokeError> {
        let http = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| InvokeError::EndpointUnavailable { attempts: 0, detail: e.to_string() })?;
        let api_key = config.api_key();
        let throttle = Throttle::new(config.max_in_flight, config.requests_per_second);
        Ok(Self { config, api_key, http, throttle })
    }

    pub fn config(&self) -> &MllmConfig {
        &self.config
    }

    fn attempt(&self, body: &Value, attempts: u32) -> Result<String, InvokeError> {
        let _permit = self.throttle.acquire();
        let mut req = self.http.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                InvokeError::Timeout { attempts }
            } else {
                InvokeError::EndpointUnavailable { attempts, detail: e.to_string() }
            }
        })?;
        let status = resp.status();
        match status {
            s if s.is_success() => {
                let value: Value = resp.json().map_err(|e| {
                    if e.is_timeout() {
                        InvokeError::Timeout { attempts }
                    } else {
                        InvokeError::InvalidResponse(e.to_string())
                    }
                })?;
                response_text(&value)
                    .ok_or_else(|| InvokeError::InvalidResponse("no choices[0].message.content".into()))
            }
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(InvokeError::AuthFailure { status: status.as_u16() }),
            StatusCode::TOO_MANY_REQUESTS => Err(InvokeError::RateLimited { attempts }),
            StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => Err(InvokeError::Timeout { attempts }),
            s if s.is_server_error() => Err(InvokeError::EndpointUnavailable {
                attempts,
                detail: format!("HTTP {}", s.as_u16()),
            }),
            s => Err(InvokeError::Rejected {
                status: s.as_u16(),
                body: resp.text().unwrap_or_default().chars().take(512).collect(),
            }),
        }
    }
}

fn with_attempts(err: InvokeError, n: u32) -> InvokeError {
    match err {
        InvokeError::EndpointUnavailable { detail, .. } => InvokeError::EndpointUnavailable { attempts: n, detail },
        InvokeError::Timeout { .. } => InvokeError::Timeout { attempts: n },
        InvokeError::RateLimited { .. } => InvokeError::RateLimited { attempts: n },
        other => other,
    }
}

impl Mllm for HttpMllm {
    fn complete(&self, prompt: &PromptBundle) -> Result<Completion, InvokeError> {
        let body = request_body(prompt, &self.config.model, self.config.temperature);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Ok(text) => return Ok(Completion { text, attempts }),
                Err(e) if e.is_transient() && attempts <= self.config.max_retries => {
                    let backoff = self.config.backoff_base_ms as f64 * 2f64.powi(attempts as i32 - 1);
                    tracing::warn!(attempt = attempts, error = %e, backoff_ms = backoff, "retrying model request");
                    std::thread::sleep(Duration::from_secs_f64(backoff / 1000.0));
                }
                Err(e) => return Err(with_attempts(e, attempts)),
            }
        }
    }

    fn reachable(&self) -> bool {
        // Any HTTP answer (even 404/405) means something is listening.
        self.http
            .get(&self.config.endpoint)
            .timeout(Duration::from_secs(2))
            .send()
            .is_ok()
    }
}

/// Sends one prompt with a fresh client built from `config`.
pub fn invoke_mllm(prompt: &PromptBundle, config: &MllmConfig) -> Result<Completion, InvokeError> {
    HttpMllm::new(config.clone())?.complete(prompt)
}
