//! Chat-completion gateway: request/response types, the deterministic
//! scripted backend used by tests and replays, and token/cost accounting.
//!
//! The agent only ever sees the [`Backend`] trait, so a live HTTP model (see
//! `http::RemoteChat`) and a canned script are interchangeable. Stop
//! sequences are enforced client-side in [`apply_stop`]: whatever a backend
//! produces, the text handed to the agent never contains a configured stop
//! marker.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::System => write!(f, "system"),
            Role::User => write!(f, "user"),
            Role::Assistant => write!(f, "assistant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One completion request. Defaults are greedy decoding with no stop
/// sequences; reasoning turns add the `[Observation]` stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
    pub max_output_tokens: usize,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        ChatRequest {
            messages,
            temperature: 0.0,
            stop_sequences: Vec::new(),
            max_output_tokens: 2048,
        }
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn add(&mut self, other: &Usage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no scripted reply matches the prompt starting with {prefix:?}")]
    ScriptMiss { prefix: String },
    #[error("{path}:{line}: bad script record: {reason}")]
    BadScript {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chat request must contain at least one message")]
    EmptyRequest,
}

/// Anything that can answer a chat request. Implementations must be safe to
/// share across the concurrent session pool.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Issue `req` against `backend` after validating it.
pub fn complete(backend: &dyn Backend, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
    if req.messages.is_empty() {
        return Err(LlmError::EmptyRequest);
    }
    backend.complete(req)
}

/// Cut `text` at the earliest occurrence of any stop sequence. Returns the
/// kept prefix and whether a cut happened.
pub fn apply_stop(text: &str, stop_sequences: &[String]) -> (String, bool) {
    let mut cut = text.len();
    for stop in stop_sequences {
        if stop.is_empty() {
            continue;
        }
        if let Some(i) = text.find(stop.as_str()) {
            cut = cut.min(i);
        }
    }
    (text[..cut].to_string(), cut < text.len())
}

/// Whitespace token count, the deterministic usage proxy for scripted runs.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// One playback step: `matcher` is a substring probed against the last user
/// message; `reply` is returned verbatim (minus stop truncation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: String,
    pub reply: String,
}

/// Deterministic offline backend replaying a fixed script.
///
/// Entries are consumed at most once, in order: each completion takes the
/// first unconsumed entry whose matcher occurs in the last user message.
/// Identical runs therefore yield bitwise-identical transcripts, and a
/// prompt no entry matches is a hard error naming the prompt, which keeps
/// fixture drift loud.
///
/// The stateless variant never consumes entries (first match always wins),
/// so one script can serve any number of concurrent sessions and the reply
/// depends on the prompt alone.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Mutex<Vec<(ScriptEntry, bool)>>,
    consume: bool,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend {
            entries: Mutex::new(entries.into_iter().map(|e| (e, false)).collect()),
            consume: true,
        }
    }

    /// Script whose entries are reusable: every completion takes the first
    /// entry matching the prompt, regardless of prior calls.
    pub fn stateless(entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend {
            consume: false,
            ..ScriptedBackend::new(entries)
        }
    }

    /// Load a line-delimited JSON script: one `{"match": ..., "reply": ...}`
    /// per line.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(ScriptedBackend::new(Self::parse_script(path)?))
    }

    /// Like [`ScriptedBackend::load`], but entries never consume, so any
    /// number of concurrent sessions can share the script.
    pub fn load_stateless(path: &Path) -> Result<Self, LlmError> {
        Ok(ScriptedBackend::stateless(Self::parse_script(path)?))
    }

    fn parse_script(path: &Path) -> Result<Vec<ScriptEntry>, LlmError> {
        let text = fs::read_to_string(path).map_err(|source| LlmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| LlmError::BadScript {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(entries)
    }

    /// Fresh copy with every entry unconsumed, for replay comparisons.
    pub fn reset_clone(&self) -> ScriptedBackend {
        let entries = self.entries.lock().expect("script lock");
        ScriptedBackend {
            entries: Mutex::new(entries.iter().map(|(e, _)| (e.clone(), false)).collect()),
            consume: self.consume,
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let last_user = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let mut entries = self.entries.lock().expect("script lock");
        let hit = entries
            .iter_mut()
            .find(|(entry, consumed)| !consumed && last_user.contains(&entry.matcher));
        let Some((entry, consumed)) = hit else {
            let prefix: String = last_user.chars().take(120).collect();
            return Err(LlmError::ScriptMiss { prefix });
        };
        if self.consume {
            *consumed = true;
        }
        let (text, _) = apply_stop(&entry.reply, &req.stop_sequences);
        let input_tokens: u64 = req
            .messages
            .iter()
            .map(|m| whitespace_tokens(&m.content))
            .sum();
        Ok(ChatResponse {
            usage: Usage {
                input_tokens,
                output_tokens: whitespace_tokens(&text),
            },
            finish_reason: FinishReason::Stop,
            text,
        })
    }
}

/// Per-token prices. Always configuration; there is no hardcoded price sheet.
/// Absent fields deserialize to the defaults (free, USD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pricing {
    pub input_cost_per_token: f64,
    pub output_cost_per_token: f64,
    pub currency: String,
}

impl Default for Pricing {
    fn default() -> Self {
        Pricing {
            input_cost_per_token: 0.0,
            output_cost_per_token: 0.0,
            currency: "USD".to_string(),
        }
    }
}

impl Pricing {
    pub fn cost(&self, usage: &Usage) -> f64 {
        usage.input_tokens as f64 * self.input_cost_per_token
            + usage.output_tokens as f64 * self.output_cost_per_token
    }
}

/// Process-wide usage accumulator. Updates are atomic under one lock, so
/// totals always equal the sum of recorded calls.
#[derive(Default)]
pub struct UsageLedger {
    inner: Mutex<LedgerTotals>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LedgerTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl UsageLedger {
    pub fn record(&self, usage: &Usage) {
        let mut inner = self.inner.lock().expect("ledger lock");
        inner.calls += 1;
        inner.input_tokens += usage.input_tokens;
        inner.output_tokens += usage.output_tokens;
    }

    pub fn totals(&self) -> LedgerTotals {
        *self.inner.lock().expect("ledger lock")
    }
}

/// The usage facts one session contributes to the cost report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionUsage {
    pub turns: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Averages over a batch of sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub sessions: usize,
    pub avg_turns: f64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
    pub avg_cost: f64,
    pub currency: String,
}

/// Aggregate session usages into the cost table. Zero sessions yield `None`
/// (an explicitly empty table beats a row of NaNs).
pub fn record_and_report(pricing: &Pricing, sessions: &[SessionUsage]) -> Option<CostReport> {
    if sessions.is_empty() {
        return None;
    }
    let n = sessions.len() as f64;
    let turns: u64 = sessions.iter().map(|s| s.turns).sum();
    let input: u64 = sessions.iter().map(|s| s.input_tokens).sum();
    let output: u64 = sessions.iter().map(|s| s.output_tokens).sum();
    let cost: f64 = sessions
        .iter()
        .map(|s| {
            pricing.cost(&Usage {
                input_tokens: s.input_tokens,
                output_tokens: s.output_tokens,
            })
        })
        .sum();
    Some(CostReport {
        sessions: sessions.len(),
        avg_turns: turns as f64 / n,
        avg_input_tokens: input as f64 / n,
        avg_output_tokens: output as f64 / n,
        avg_cost: cost / n,
        currency: pricing.currency.clone(),
    })
}

/// Plain-text cost table in the usual benchmark layout.
pub fn render_cost_report(report: &CostReport) -> String {
    format!(
        "Sessions: {}\nAvg. interaction turns: {:.2}\nAvg. input tokens: {:.2}\n\
         Avg. output tokens: {:.2}\nAvg. cost per sample: {:.6} {}",
        report.sessions,
        report.avg_turns,
        report.avg_input_tokens,
        report.avg_output_tokens,
        report.avg_cost,
        report.currency
    )
}
