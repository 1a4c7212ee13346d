//! Live HTTP adapters: a chat model, an embedding endpoint, a wiki lookup
//! service, and a web search API, all behind one injectable [`Transport`].
//!
//! Nothing else in the crate touches the network. Tests exercise the
//! adapters with stub transports, the scripted pipeline never constructs a
//! transport at all, and credentials come exclusively from environment
//! variables named in the run configuration.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use crate::llm::{apply_stop, whitespace_tokens, Backend, ChatRequest, ChatResponse, FinishReason, LlmError, Usage};
use crate::retrieval::{DenseVector, Encoder, RetrievalError};
use crate::tools::{Article, ProviderError, Snippet, WebProvider, WikiProvider};

/// Transport failures split by whether a retry could plausibly help.
#[derive(Debug, Clone)]
pub enum TransportError {
    /// Network hiccups, 5xx, 429: retried with backoff.
    Transient(String),
    /// Anything else (auth failures, bad requests): fail fast.
    Fatal(String),
}

impl TransportError {
    fn message(&self) -> &str {
        match self {
            TransportError::Transient(m) | TransportError::Fatal(m) => m,
        }
    }
}

/// Minimal JSON-over-POST transport all remote adapters share.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<Value, TransportError>;
}

/// Retry schedule: `max_retries` extra attempts, backoff doubling from
/// `backoff_base`. Tests set the base to zero.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

/// Run `attempt` under the policy. Returns the successful value or the last
/// error plus the number of attempts made.
fn with_retries<T>(
    policy: &RetryPolicy,
    mut attempt: impl FnMut() -> Result<T, TransportError>,
) -> Result<T, (u32, TransportError)> {
    let mut tries = 0;
    let mut delay = policy.backoff_base;
    loop {
        tries += 1;
        match attempt() {
            Ok(v) => return Ok(v),
            Err(e @ TransportError::Fatal(_)) => return Err((tries, e)),
            Err(e @ TransportError::Transient(_)) => {
                if tries > policy.max_retries {
                    return Err((tries, e));
                }
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                delay = delay.saturating_mul(2);
            }
        }
    }
}

/// Process-wide pacing for live endpoints: at most one request per
/// `min_interval`, shared by every adapter holding a clone of the handle.
#[derive(Default)]
pub struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<std::time::Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        RateLimiter {
            min_interval,
            last: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last.lock().expect("rate limiter lock");
        let now = std::time::Instant::now();
        if let Some(prev) = *last {
            let elapsed = now.duration_since(prev);
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(std::time::Instant::now());
    }
}

/// Real transport backed by a blocking reqwest client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<Value, TransportError> {
        let mut req = self.client.post(url).json(body);
        for (name, value) in headers {
            req = req.header(name, value);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            let brief: String = body.chars().take(200).collect();
            return Err(TransportError::Fatal(format!("HTTP {status}: {brief}")));
        }
        resp.json()
            .map_err(|e| TransportError::Fatal(format!("bad JSON body: {e}")))
    }
}

fn bearer_headers(api_key: &Option<String>) -> Vec<(String, String)> {
    let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
    if let Some(key) = api_key {
        headers.push(("Authorization".to_string(), format!("Bearer {key}")));
    }
    headers
}

/// Read the credential named by `env_name`, treating empty as unset.
pub fn credential_from_env(env_name: &str) -> Option<String> {
    match std::env::var(env_name) {
        Ok(v) if !v.trim().is_empty() => Some(v),
        _ => None,
    }
}

/// Chat-completion client for endpoints speaking the common JSON contract
/// (`model`, `messages`, `temperature`, `stop` in; `choices[0].message.
/// content` and `usage` out).
pub struct RemoteChat {
    transport: Box<dyn Transport>,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl RemoteChat {
    pub fn new(
        transport: Box<dyn Transport>,
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        RemoteChat {
            transport,
            url: url.into(),
            model: model.into(),
            api_key,
            retry,
        }
    }
}

impl Backend for RemoteChat {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let messages: Vec<Value> = req
            .messages
            .iter()
            .map(|m| json!({"role": m.role.to_string(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        let headers = bearer_headers(&self.api_key);
        let value = with_retries(&self.retry, || {
            self.transport.post_json(&self.url, &headers, &body)
        })
        .map_err(|(attempts, e)| LlmError::Transport {
            attempts,
            message: e.message().to_string(),
        })?;

        let raw_text = value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        // Providers usually honor `stop` themselves; enforcing it here keeps
        // the contract regardless.
        let (text, _) = apply_stop(&raw_text, &req.stop_sequences);
        let usage = match value.get("usage") {
            Some(u) if u.is_object() => Usage {
                input_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
                output_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
            },
            // Token accounting falls back to the client-side estimate when
            // the provider omits usage.
            _ => Usage {
                input_tokens: req
                    .messages
                    .iter()
                    .map(|m| whitespace_tokens(&m.content))
                    .sum(),
                output_tokens: whitespace_tokens(&text),
            },
        };
        let finish_reason = match value["choices"][0]["finish_reason"].as_str() {
            Some("length") => FinishReason::Length,
            Some("error") => FinishReason::Error,
            _ => FinishReason::Stop,
        };
        Ok(ChatResponse {
            text,
            usage,
            finish_reason,
        })
    }
}

/// Embedding client: posts a batch of texts, expects equal-length vectors.
/// Responses are cached by exact text, so repeated encodes of catalog labels
/// cost one request each.
pub struct RemoteEncoder {
    transport: Box<dyn Transport>,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    dimension: usize,
    cache: Mutex<HashMap<String, DenseVector>>,
}

impl RemoteEncoder {
    pub fn new(
        transport: Box<dyn Transport>,
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
        dimension: usize,
    ) -> Self {
        assert!(dimension > 0, "encoder dimension must be positive");
        RemoteEncoder {
            transport,
            url: url.into(),
            model: model.into(),
            api_key,
            retry,
            dimension,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Encoder for RemoteEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, text: &str) -> Result<DenseVector, RetrievalError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(text) {
            return Ok(hit.clone());
        }
        let body = json!({"model": self.model, "input": [text]});
        let headers = bearer_headers(&self.api_key);
        let value = with_retries(&self.retry, || {
            self.transport.post_json(&self.url, &headers, &body)
        })
        .map_err(|(attempts, e)| {
            RetrievalError::Backend(format!(
                "embedding request failed after {attempts} attempt(s): {}",
                e.message()
            ))
        })?;
        let raw = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| RetrievalError::Backend("response carries no embedding".into()))?;
        let vector: DenseVector = raw.iter().filter_map(Value::as_f64).collect();
        if vector.len() != raw.len() || vector.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::Backend(
                "embedding contains non-numeric components".into(),
            ));
        }
        if vector.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                left: self.dimension,
                right: vector.len(),
            });
        }
        self.cache
            .lock()
            .expect("cache lock")
            .insert(text.to_string(), vector.clone());
        Ok(vector)
    }
}

/// Wiki lookup client: posts `{"title": ...}`, expects
/// `{"found": bool, "title": ..., "text": ...}`.
pub struct RemoteWiki {
    transport: Box<dyn Transport>,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl RemoteWiki {
    pub fn new(
        transport: Box<dyn Transport>,
        url: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        RemoteWiki {
            transport,
            url: url.into(),
            api_key,
            retry,
        }
    }
}

impl WikiProvider for RemoteWiki {
    fn article(&self, title: &str) -> Result<Option<Article>, ProviderError> {
        let body = json!({"title": title});
        let headers = bearer_headers(&self.api_key);
        let value = with_retries(&self.retry, || {
            self.transport.post_json(&self.url, &headers, &body)
        })
        .map_err(|(_, e)| ProviderError::Transport(e.message().to_string()))?;
        if !value["found"].as_bool().unwrap_or(false) {
            return Ok(None);
        }
        Ok(Some(Article {
            title: value["title"].as_str().unwrap_or(title).to_string(),
            text: value["text"].as_str().unwrap_or_default().to_string(),
        }))
    }
}

/// Web search client: posts `{"question": ...}`, expects
/// `{"snippets": [{"text": ..., "source": ...}]}`.
pub struct RemoteWeb {
    transport: Box<dyn Transport>,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl RemoteWeb {
    pub fn new(
        transport: Box<dyn Transport>,
        url: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        RemoteWeb {
            transport,
            url: url.into(),
            api_key,
            retry,
        }
    }
}

impl WebProvider for RemoteWeb {
    fn search(&self, question: &str) -> Result<Vec<Snippet>, ProviderError> {
        let body = json!({"question": question});
        let headers = bearer_headers(&self.api_key);
        let value = with_retries(&self.retry, || {
            self.transport.post_json(&self.url, &headers, &body)
        })
        .map_err(|(_, e)| ProviderError::Transport(e.message().to_string()))?;
        let snippets = value["snippets"]
            .as_array()
            .map(|items| {
                items
                    .iter()
                    .map(|s| Snippet {
                        text: s["text"].as_str().unwrap_or_default().to_string(),
                        source: s["source"].as_str().unwrap_or("web").to_string(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(snippets)
    }
}
