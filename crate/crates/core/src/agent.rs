//! The verification loop: retrieve demonstrations, draft a strategic plan,
//! then alternate Think-Act-Observe turns against the tool dispatcher until
//! the model declares a verdict or the turn budget forces one.
//!
//! Three prompt templates drive the loop, shipped as text assets under
//! `assets/prompts/` and filled by simple `{slot}` substitution: a planning
//! prompt, the per-turn reasoning prompt, and the mandatory-judgment prompt
//! issued when the budget runs out. Baseline modes reuse the same plumbing:
//! standard RAG runs a fixed retrieval sweep and one completion, zero-shot
//! skips retrieval entirely.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::kg::{ExclusionSet, KnowledgeGraph};
use crate::llm::{
    complete, Backend, ChatRequest, ChatResponse, Message, SessionUsage, UsageLedger,
};
use crate::memory::{self, MemoryBank};
use crate::retrieval::{Encoder, HybridConfig};
use crate::tools::{
    dispatch, filtered_registry, render_registry, ToolCall, ToolEnv, ToolLimits, ToolName,
    WebProvider, WikiProvider, FORMAT_ERROR_TOOL,
};
use crate::{Label, Triple};

/// Stop sequence for every agent-issued completion: the model must never
/// write its own observations.
pub const OBSERVATION_STOP: &str = "[Observation]";

/// Marker line a plan reply must contain.
pub const PLAN_MARKER: &str = "=== Strategic Plan ===";

const DEFAULT_JUDGMENT_CRITERIA: &str = "Judge strictly from the gathered evidence. Structural \
paths in the graph and corroborating external text outweigh prior intuition; absence of \
evidence alone does not prove the triple false.";

/// The three prompt templates. Defaults come from the shipped assets; every
/// field can be overridden wholesale for experimentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub plan: String,
    pub reasoning: String,
    pub judgment: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            plan: include_str!("../assets/prompts/plan.txt").to_string(),
            reasoning: include_str!("../assets/prompts/reasoning.txt").to_string(),
            judgment: include_str!("../assets/prompts/judgment.txt").to_string(),
        }
    }
}

/// Replace `{name}` slots. Unknown slots are left in place so drift between
/// template and fill list is visible in the rendered prompt.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Split a template at its user-section marker line. The marker itself is
/// scaffolding and belongs to neither part. Splitting happens before filling
/// so slot contents can never shift the boundary.
fn split_template(text: &str, marker: &str) -> (String, String) {
    match text.find(marker) {
        Some(pos) => {
            let head = text[..pos].trim_end().to_string();
            let tail = text[pos + marker.len()..]
                .trim_start_matches('\n')
                .trim_end()
                .to_string();
            (head, tail)
        }
        None => (String::new(), text.trim_end().to_string()),
    }
}

/// One parsed plan line: the step text plus any tool the line names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub description: String,
    pub suggested_tool: Option<String>,
    pub suggested_args: Option<Vec<String>>,
}

/// The strategic plan pinned into every reasoning turn. Empty only on the
/// documented planning-failure fallback or when planning is ablated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

/// Parse the numbered lines under the plan marker. `None` when the marker is
/// missing or introduces no steps, which callers treat as a parse failure.
pub fn parse_plan(text: &str) -> Option<Plan> {
    let pos = text.find(PLAN_MARKER)?;
    let mut steps = Vec::new();
    for raw in text[pos + PLAN_MARKER.len()..].lines() {
        let line = raw.trim();
        if line.is_empty() || line.chars().all(|c| c == '.') {
            continue;
        }
        let description = clean_step_line(line);
        if description.is_empty() {
            continue;
        }
        let (suggested_tool, suggested_args) = extract_tool_hint(&description);
        steps.push(PlanStep {
            description,
            suggested_tool,
            suggested_args,
        });
    }
    if steps.is_empty() {
        None
    } else {
        Some(Plan { steps })
    }
}

/// Strip list decoration: surrounding brackets, bullets, "1." / "1)" /
/// "Step 1:" prefixes.
fn clean_step_line(line: &str) -> String {
    let mut s = line.trim();
    if s.starts_with('[') && s.ends_with(']') && s.len() >= 2 {
        s = s[1..s.len() - 1].trim();
    }
    if let Some(rest) = s.strip_prefix("- ").or_else(|| s.strip_prefix("* ")) {
        return rest.trim().to_string();
    }
    let lowered = s.to_ascii_lowercase();
    if let Some(rest) = lowered.strip_prefix("step") {
        let skipped = s.len() - rest.len();
        let after = s[skipped..].trim_start();
        let digits = after.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 {
            let tail = after[digits..].trim_start();
            let tail = tail.strip_prefix([':', '.', ')']).unwrap_or(tail);
            return tail.trim().to_string();
        }
    }
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = s[digits..].strip_prefix(['.', ')']) {
            return rest.trim().to_string();
        }
    }
    s.to_string()
}

/// Find the first recognizable tool name in a plan line, and its call
/// arguments when the line spells out a full invocation.
fn extract_tool_hint(description: &str) -> (Option<String>, Option<Vec<String>>) {
    let bytes = description.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_alphabetic() || bytes[i] == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            if let Some(name) = ToolName::from_alias(&description[start..i]) {
                if name != ToolName::Finish {
                    let args = parse_call(&description[start..])
                        .map(|c| c.arguments)
                        .filter(|a| !a.is_empty());
                    return (Some(name.canonical().to_string()), args);
                }
            }
        } else {
            i += 1;
        }
    }
    (None, None)
}

/// Plan text as pinned into the prompts.
pub fn render_plan(plan: &Plan) -> String {
    if plan.steps.is_empty() {
        return "(none)".to_string();
    }
    plan.steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("Step {}: {}", i + 1, s.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse `Name(v1, v2, ...)` starting at the tool name. Commas inside quotes
/// or nested parens do not split; keyword prefixes (`entity=`) are dropped;
/// symmetric surrounding quotes are stripped. `None` on anything unbalanced.
pub fn parse_call(text: &str) -> Option<ToolCall> {
    let open = text.find('(')?;
    let name = text[..open].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    let rest = &text[open + 1..];
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut close = None;
    for (i, c) in rest.char_indices() {
        match quote {
            Some(q) => {
                if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => quote = Some(c),
                '(' => depth += 1,
                ')' => {
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                    depth -= 1;
                }
                _ => {}
            },
        }
    }
    let inner = &rest[..close?];
    Some(ToolCall::new(name, split_args(inner)))
}

fn split_args(inner: &str) -> Vec<String> {
    if inner.trim().is_empty() {
        return Vec::new();
    }
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    let mut depth = 0usize;
    for c in inner.chars() {
        match quote {
            Some(q) => {
                current.push(c);
                if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => {
                    quote = Some(c);
                    current.push(c);
                }
                '(' => {
                    depth += 1;
                    current.push(c);
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    current.push(c);
                }
                ',' if depth == 0 => parts.push(std::mem::take(&mut current)),
                _ => current.push(c),
            },
        }
    }
    parts.push(current);
    parts.iter().map(|p| clean_arg(p)).collect()
}

/// Normalize one argument: positional value with keyword prefix and
/// surrounding quotes removed.
fn clean_arg(raw: &str) -> String {
    let mut s = raw.trim();
    if let Some(pos) = s.find('=') {
        if is_identifier(&s[..pos]) {
            s = s[pos + 1..].trim_start();
        }
    } else if let Some(pos) = s.find(':') {
        // Keyword-colon form needs a space after the colon, so URL schemes
        // and plain ids survive intact.
        if is_identifier(&s[..pos]) && s[pos + 1..].starts_with(char::is_whitespace) {
            s = s[pos + 1..].trim_start();
        }
    }
    strip_quotes(s).to_string()
}

fn is_identifier(s: &str) -> bool {
    let s = s.trim();
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for q in ['\'', '"'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

/// What one reasoning reply resolved to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedAct {
    Call(ToolCall),
    Finish(String),
    Invalid,
}

struct MarkerHit {
    line_start: usize,
    content_start: usize,
}

fn strip_marker_ci<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    line.get(..marker.len())
        .filter(|p| p.eq_ignore_ascii_case(marker))
        .map(|_| &line[marker.len()..])
}

/// Parse one reasoning reply into (thought, act).
///
/// `Final Answer:` is terminal and wins over any `Action:`; otherwise the
/// last `Action:` line is parsed as a call. Anything else, including
/// unbalanced calls, is `Invalid` with the raw reply preserved as the
/// thought for the transcript.
pub fn parse_step(reply: &str) -> (String, ParsedAct) {
    let mut thoughts: Vec<MarkerHit> = Vec::new();
    let mut actions: Vec<MarkerHit> = Vec::new();
    let mut finals: Vec<MarkerHit> = Vec::new();
    let mut offset = 0;
    for line in reply.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let indent = line.len() - trimmed.len();
        for (marker, bucket_index) in [
            ("thought:", 0usize),
            ("action:", 1),
            ("final answer:", 2),
        ] {
            if strip_marker_ci(trimmed, marker).is_some() {
                let hit = MarkerHit {
                    line_start: offset,
                    content_start: offset + indent + marker.len(),
                };
                match bucket_index {
                    0 => thoughts.push(hit),
                    1 => actions.push(hit),
                    _ => finals.push(hit),
                }
                break;
            }
        }
        offset += line.len();
    }

    let thought_before = |stop: usize| {
        thoughts
            .iter()
            .filter(|t| t.line_start < stop)
            .next_back()
            .map(|t| reply[t.content_start..stop].trim().to_string())
            .unwrap_or_default()
    };

    if let Some(f) = finals.last() {
        let thought = thought_before(f.line_start);
        return (thought, ParsedAct::Finish(reply[f.line_start..].trim().to_string()));
    }
    if let Some(a) = actions.last() {
        let thought = thought_before(a.line_start);
        if let Some(call) = parse_call(&reply[a.content_start..]) {
            return (thought, ParsedAct::Call(call));
        }
        return (reply.trim().to_string(), ParsedAct::Invalid);
    }
    (reply.trim().to_string(), ParsedAct::Invalid)
}

/// The parsed final decision. `label` is absent exactly when `valid_format`
/// is false; such sessions are scored against the true class downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Option<Label>,
    pub explanation: String,
    /// Indices into the session transcript whose observations this verdict
    /// draws on.
    pub evidence_chain: Vec<usize>,
    pub valid_format: bool,
    /// The chain is linked by text overlap, not declared by the model.
    pub heuristic_chain: bool,
}

/// Total parse of "Final Answer: [Correct/Incorrect] Because ...". Case
/// insensitive, tolerant of missing brackets; refusals and hedges come back
/// with `valid_format: false` and the raw text kept as the explanation.
pub fn parse_verdict(text: &str) -> Verdict {
    let invalid = |explanation: String| Verdict {
        label: None,
        explanation,
        evidence_chain: Vec::new(),
        valid_format: false,
        heuristic_chain: false,
    };
    let lower = text.to_ascii_lowercase();
    let Some(pos) = lower.rfind("final answer") else {
        return invalid(text.trim().to_string());
    };
    let after_marker = match text[pos + "final answer".len()..].trim_start().strip_prefix(':') {
        Some(rest) => rest,
        None => return invalid(text.trim().to_string()),
    };
    let mut rest = after_marker.trim_start();
    rest = rest.strip_prefix('[').unwrap_or(rest).trim_start();
    let word_len = rest
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .count();
    let Some(label) = Label::parse(&rest[..word_len]) else {
        return invalid(text.trim().to_string());
    };
    let mut explanation = rest[word_len..]
        .trim_start_matches([']', '.', ',', ' ', '\t', '\n'])
        .trim();
    if let Some(stripped) = strip_marker_ci(explanation, "because") {
        explanation = stripped.trim_start();
    }
    Verdict {
        label: Some(label),
        explanation: explanation.trim().to_string(),
        evidence_chain: Vec::new(),
        valid_format: true,
        heuristic_chain: false,
    }
}

/// Double-quoted spans of the explanation, lowered, length >= 3.
fn quoted_spans(text: &str) -> Vec<String> {
    let mut spans = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('"') {
        let tail = &rest[open + 1..];
        let Some(close) = tail.find('"') else { break };
        let span = tail[..close].trim();
        if span.chars().count() >= 3 {
            spans.push(span.to_ascii_lowercase());
        }
        rest = &tail[close + 1..];
    }
    spans
}

/// Case-insensitive whole-word containment; `haystack` and `term` must
/// already be lowered.
fn contains_term(haystack: &str, term: &str) -> bool {
    if term.is_empty() {
        return false;
    }
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(term) {
        let abs = start + pos;
        let before_ok = abs == 0 || !haystack.as_bytes()[abs - 1].is_ascii_alphanumeric();
        let end = abs + term.len();
        let after_ok = end >= haystack.len() || !haystack.as_bytes()[end].is_ascii_alphanumeric();
        if before_ok && after_ok {
            return true;
        }
        let step = term.chars().next().map_or(1, char::len_utf8);
        start = abs + step;
    }
    false
}

/// Link the verdict to the observations it plausibly cites: a transcript
/// entry joins the chain when its observation shares a quoted span with the
/// explanation, or shares a catalog label that is not one of the target's
/// own entity surface forms (those appear in every prompt and would link
/// everything).
pub fn link_evidence(
    verdict: &mut Verdict,
    steps: &[TranscriptStep],
    g: &KnowledgeGraph,
    target: &Triple,
) {
    verdict.heuristic_chain = true;
    verdict.evidence_chain.clear();
    if !verdict.valid_format {
        return;
    }
    let explanation = verdict.explanation.to_ascii_lowercase();
    let quoted = quoted_spans(&verdict.explanation);

    let mut excluded: HashSet<String> = HashSet::new();
    for id in [&target.head, &target.tail] {
        excluded.insert(id.to_ascii_lowercase());
        if let Some(e) = g.entity(id) {
            excluded.insert(e.label.to_ascii_lowercase());
            for a in &e.aliases {
                excluded.insert(a.to_ascii_lowercase());
            }
        }
    }

    // Vocabulary terms present in the explanation; only those need checking
    // against each observation.
    let mut cited_terms: Vec<String> = Vec::new();
    let mut consider = |term: &str| {
        let lowered = term.to_ascii_lowercase();
        if lowered.chars().count() >= 3
            && !excluded.contains(&lowered)
            && contains_term(&explanation, &lowered)
        {
            cited_terms.push(lowered);
        }
    };
    for e in g.entities() {
        consider(&e.label);
        for a in &e.aliases {
            consider(a);
        }
    }
    for r in g.relations() {
        consider(&r.label);
        for a in &r.aliases {
            consider(a);
        }
    }
    cited_terms.sort();
    cited_terms.dedup();

    for (i, step) in steps.iter().enumerate() {
        let Some(obs) = &step.observation else {
            continue;
        };
        let obs_lower = obs.to_ascii_lowercase();
        let linked = quoted.iter().any(|q| obs_lower.contains(q.as_str()))
            || cited_terms.iter().any(|t| contains_term(&obs_lower, t));
        if linked {
            verdict.evidence_chain.push(i);
        }
    }
}

/// Which subsystems stay on. All-true is the full engine; each flag maps to
/// one ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub memory: bool,
    pub planning: bool,
    pub kg_tools: bool,
    pub external_tools: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            memory: true,
            planning: true,
            kg_tools: true,
            external_tools: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Agent,
    RagBaseline,
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Turn budget for the Think-Act-Observe loop.
    pub t_max: usize,
    /// Demonstrations retrieved per session.
    pub k_memory: usize,
    pub ablations: Ablations,
    pub mode: Mode,
    /// Text filling the reasoning prompt's criteria slot.
    pub judgment_criteria: String,
    /// Capture a one-shot prior impression before planning (fills the
    /// judgment prompt's impression slot). Off by default.
    pub capture_impression: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            t_max: 10,
            k_memory: 3,
            ablations: Ablations::default(),
            mode: Mode::Agent,
            judgment_criteria: DEFAULT_JUDGMENT_CRITERIA.to_string(),
            capture_impression: false,
        }
    }
}

impl SessionConfig {
    /// With both tool groups disabled the loop has nothing to act with, so
    /// the session degenerates to zero-shot judgment.
    pub fn effective_mode(&self) -> Mode {
        if self.mode == Mode::Agent
            && !self.ablations.kg_tools
            && !self.ablations.external_tools
        {
            Mode::ZeroShot
        } else {
            self.mode
        }
    }
}

/// Everything a session borrows: the immutable graph and bank, providers,
/// templates, limits, and an optional shared usage ledger.
pub struct SessionEnv<'a> {
    pub graph: &'a KnowledgeGraph,
    pub encoder: &'a dyn Encoder,
    pub wiki: Option<&'a dyn WikiProvider>,
    pub web: Option<&'a dyn WebProvider>,
    pub bank: &'a MemoryBank,
    pub limits: ToolLimits,
    pub hybrid: HybridConfig,
    pub templates: &'a PromptTemplates,
    pub ledger: Option<&'a UsageLedger>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentAction {
    Tool(ToolCall),
    /// Carries the full `Final Answer: ...` text.
    Finish(String),
}

/// One executed turn of the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub thought: String,
    pub action: AgentAction,
    pub observation: Option<String>,
}

/// The full, replayable account of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub target: Triple,
    pub truth: Option<Label>,
    pub plan: Plan,
    pub steps: Vec<TranscriptStep>,
    pub verdict: Verdict,
    /// Canonical tool name -> dispatch count; sums to the executed calls.
    pub tool_counts: BTreeMap<String, usize>,
    pub usage: SessionUsage,
    pub duration_ms: u64,
    pub mode: Mode,
    pub ablations: Ablations,
    /// True when the budget ran out and the judgment prompt decided.
    pub mandatory_judgment: bool,
}

impl SessionRecord {
    /// Copy with the wall clock zeroed: the timing-free form two replays of
    /// the same script must agree on bitwise.
    pub fn canonical(&self) -> SessionRecord {
        SessionRecord {
            duration_ms: 0,
            ..self.clone()
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<SessionRecord, serde_json::Error> {
        serde_json::from_str(line)
    }

    /// A prediction is correct when the verdict is valid and matches truth.
    pub fn is_correct(&self) -> Option<bool> {
        let truth = self.truth?;
        Some(self.verdict.valid_format && self.verdict.label == Some(truth))
    }

    /// True when the session aborted on a backend transport error instead of
    /// completing the protocol. Distinct from an invalid final answer: a
    /// refusal still counts as a finished (wrong) prediction, while a batch
    /// containing aborts is a degraded run.
    pub fn backend_failure(&self) -> bool {
        !self.verdict.valid_format && self.verdict.explanation.starts_with(BACKEND_FAILURE)
    }
}

/// The triple as quoted in prompts, labels preferred.
pub fn render_target(t: &Triple, g: &KnowledgeGraph) -> String {
    format!(
        "({}, {}, {})",
        g.label(&t.head),
        g.label(&t.relation),
        g.label(&t.tail)
    )
}

/// The accumulated history exactly as pinned into the prompts: numbered
/// Thought/Action/Observation blocks, append-only across turns.
pub fn render_history(steps: &[TranscriptStep]) -> String {
    if steps.is_empty() {
        return "(no steps executed yet)".to_string();
    }
    let mut out = String::new();
    for (i, step) in steps.iter().enumerate() {
        let n = i + 1;
        let _ = writeln!(out, "Thought {n}: {}", step.thought);
        match &step.action {
            AgentAction::Tool(call) => {
                let _ = writeln!(out, "Action {n}: {}({})", call.tool, call.arguments.join(", "));
            }
            AgentAction::Finish(answer) => {
                let _ = writeln!(out, "{answer}");
            }
        }
        if let Some(obs) = &step.observation {
            let _ = writeln!(out, "Observation {n}:");
            let _ = writeln!(out, "{obs}");
        }
    }
    out.trim_end().to_string()
}

fn bump(usage: &mut SessionUsage, ledger: Option<&UsageLedger>, resp: &ChatResponse) {
    usage.turns += 1;
    usage.input_tokens += resp.usage.input_tokens;
    usage.output_tokens += resp.usage.output_tokens;
    if let Some(l) = ledger {
        l.record(&resp.usage);
    }
}

/// Prefix of every verdict explanation produced by a transport abort. The
/// [`SessionRecord::backend_failure`] predicate keys off it, so failure
/// detection cannot drift from the strings written here.
const BACKEND_FAILURE: &str = "backend failure during";

fn error_verdict(message: String) -> Verdict {
    Verdict {
        label: None,
        explanation: message,
        evidence_chain: Vec::new(),
        valid_format: false,
        heuristic_chain: false,
    }
}

/// Issue the planning prompt and parse the strategic plan. One retry on a
/// reply without a usable plan block, then an empty plan with a warning.
/// Backend errors propagate: without a working model there is no session.
pub fn generate_plan(
    target_text: &str,
    demos: &str,
    registry_text: &str,
    templates: &PromptTemplates,
    backend: &dyn Backend,
    usage: &mut SessionUsage,
    ledger: Option<&UsageLedger>,
) -> Result<Plan, crate::llm::LlmError> {
    let (head, tail) = split_template(&templates.plan, "User Input:");
    let system = fill(
        &head,
        &[("tool definitions", registry_text), ("trajectory case", demos)],
    );
    let user = fill(&tail, &[("triple", target_text)]);
    for attempt in 0..2 {
        let req = ChatRequest::new(vec![
            Message::system(system.clone()),
            Message::user(user.clone()),
        ])
        .with_stop(OBSERVATION_STOP);
        let resp = complete(backend, &req)?;
        bump(usage, ledger, &resp);
        if let Some(plan) = parse_plan(&resp.text) {
            return Ok(plan);
        }
        if attempt == 0 {
            log::warn!("plan reply lacked a usable '{PLAN_MARKER}' block; retrying once");
        }
    }
    log::warn!("planning failed twice; continuing with an empty plan");
    Ok(Plan::default())
}

struct PromptParts {
    system: String,
    user_tail: String,
}

fn reasoning_parts(
    templates: &PromptTemplates,
    registry_text: &str,
    criteria: &str,
) -> PromptParts {
    let (head, tail) = split_template(&templates.reasoning, "User Context:");
    PromptParts {
        system: fill(
            &head,
            &[("tool definitions", registry_text), ("judgment criteria", criteria)],
        ),
        user_tail: tail,
    }
}

fn reasoning_user(
    parts: &PromptParts,
    plan: &Plan,
    demos: &str,
    target_text: &str,
    steps: &[TranscriptStep],
) -> String {
    fill(
        &parts.user_tail,
        &[
            ("plan", &render_plan(plan)),
            ("trajectory case", demos),
            ("triple", target_text),
            ("history", &render_history(steps)),
        ],
    )
}

fn judgment_user(
    templates: &PromptTemplates,
    impression: &str,
    plan: &Plan,
    history: &str,
    target_text: &str,
) -> String {
    let impression = if impression.is_empty() {
        "(none)"
    } else {
        impression
    };
    fill(
        &templates.judgment,
        &[
            ("impression", impression),
            ("plan", &render_plan(plan)),
            ("history", history),
            ("triple", target_text),
        ],
    )
}

/// Run one verification session. Dispatches on the configured mode; the
/// default is the full planning + Think-Act-Observe engine.
pub fn run_session(
    target: &Triple,
    truth: Option<Label>,
    env: &SessionEnv,
    config: &SessionConfig,
    backend: &dyn Backend,
) -> SessionRecord {
    match config.effective_mode() {
        Mode::Agent => run_agent_session(target, truth, env, config, backend),
        Mode::RagBaseline => run_rag_baseline(target, truth, env, config, backend),
        Mode::ZeroShot => run_zero_shot(target, truth, env, config, backend),
    }
}

fn base_record(
    target: &Triple,
    truth: Option<Label>,
    config: &SessionConfig,
    mode: Mode,
) -> SessionRecord {
    SessionRecord {
        target: target.clone(),
        truth,
        plan: Plan::default(),
        steps: Vec::new(),
        verdict: error_verdict("session did not complete".to_string()),
        tool_counts: BTreeMap::new(),
        usage: SessionUsage {
            turns: 0,
            input_tokens: 0,
            output_tokens: 0,
        },
        duration_ms: 0,
        mode,
        ablations: config.ablations,
        mandatory_judgment: false,
    }
}

fn tool_env<'a>(env: &'a SessionEnv<'a>, config: &SessionConfig, target: &Triple) -> ToolEnv<'a> {
    ToolEnv {
        graph: env.graph,
        encoder: env.encoder,
        wiki: env.wiki,
        web: env.web,
        // Anti-leakage: the triple under test never appears in tool output.
        exclude: ExclusionSet::single(target.clone()),
        limits: env.limits,
        hybrid: env.hybrid,
        kg_enabled: config.ablations.kg_tools,
        external_enabled: config.ablations.external_tools,
    }
}

fn retrieve_demos(env: &SessionEnv, config: &SessionConfig, target: &Triple) -> String {
    if !config.ablations.memory {
        return memory::render_demonstrations(&[]);
    }
    match memory::retrieve(env.bank, target, config.k_memory, env.encoder, env.graph) {
        Ok(hits) => memory::render_demonstrations(&hits),
        Err(e) => {
            log::warn!("memory retrieval failed ({e}); continuing without demonstrations");
            memory::render_demonstrations(&[])
        }
    }
}

const IMPRESSION_PREASK: &str = "Based only on your internal knowledge and before any \
investigation, how plausible is the following fact? Answer in one or two sentences.\n\
Target Triple: {triple}";

fn capture_impression(
    target_text: &str,
    backend: &dyn Backend,
    usage: &mut SessionUsage,
    ledger: Option<&UsageLedger>,
) -> Result<String, crate::llm::LlmError> {
    let req = ChatRequest::new(vec![Message::user(fill(
        IMPRESSION_PREASK,
        &[("triple", target_text)],
    ))])
    .with_stop(OBSERVATION_STOP);
    let resp = complete(backend, &req)?;
    bump(usage, ledger, &resp);
    Ok(resp.text.trim().to_string())
}

fn run_agent_session(
    target: &Triple,
    truth: Option<Label>,
    env: &SessionEnv,
    config: &SessionConfig,
    backend: &dyn Backend,
) -> SessionRecord {
    let start = Instant::now();
    let mut record = base_record(target, truth, config, Mode::Agent);
    let t_max = config.t_max.max(1);
    let tool_env = tool_env(env, config, target);
    let registry_text =
        render_registry(&filtered_registry(config.ablations.kg_tools, config.ablations.external_tools));
    let target_text = render_target(target, env.graph);
    let demos = retrieve_demos(env, config, target);

    let fail = |record: &mut SessionRecord, message: String| {
        record.verdict = error_verdict(message);
        record.duration_ms = start.elapsed().as_millis() as u64;
    };

    let impression = if config.capture_impression {
        match capture_impression(&target_text, backend, &mut record.usage, env.ledger) {
            Ok(text) => text,
            Err(e) => {
                fail(&mut record, format!("{BACKEND_FAILURE} impression: {e}"));
                return record;
            }
        }
    } else {
        String::new()
    };

    if config.ablations.planning {
        match generate_plan(
            &target_text,
            &demos,
            &registry_text,
            env.templates,
            backend,
            &mut record.usage,
            env.ledger,
        ) {
            Ok(plan) => record.plan = plan,
            Err(e) => {
                fail(&mut record, format!("{BACKEND_FAILURE} planning: {e}"));
                return record;
            }
        }
    }

    let parts = reasoning_parts(env.templates, &registry_text, &config.judgment_criteria);
    let mut verdict: Option<Verdict> = None;

    for _turn in 1..=t_max {
        let user = reasoning_user(&parts, &record.plan, &demos, &target_text, &record.steps);
        let req = ChatRequest::new(vec![
            Message::system(parts.system.clone()),
            Message::user(user),
        ])
        .with_stop(OBSERVATION_STOP);
        let resp = match complete(backend, &req) {
            Ok(r) => r,
            Err(e) => {
                fail(&mut record, format!("{BACKEND_FAILURE} reasoning: {e}"));
                return record;
            }
        };
        bump(&mut record.usage, env.ledger, &resp);

        let (thought, act) = parse_step(&resp.text);
        match act {
            ParsedAct::Finish(answer) => {
                let mut v = parse_verdict(&answer);
                link_evidence(&mut v, &record.steps, env.graph, target);
                record.steps.push(TranscriptStep {
                    thought,
                    action: AgentAction::Finish(answer),
                    observation: None,
                });
                verdict = Some(v);
                break;
            }
            ParsedAct::Call(call) => {
                let result = dispatch(&call, &tool_env);
                let key = call
                    .name()
                    .map(|n| n.canonical().to_string())
                    .unwrap_or_else(|| call.tool.clone());
                *record.tool_counts.entry(key).or_insert(0) += 1;
                record.steps.push(TranscriptStep {
                    thought,
                    action: AgentAction::Tool(call),
                    observation: Some(result.rendering),
                });
            }
            ParsedAct::Invalid => {
                let call = ToolCall::new(FORMAT_ERROR_TOOL, Vec::new());
                let result = dispatch(&call, &tool_env);
                *record
                    .tool_counts
                    .entry(FORMAT_ERROR_TOOL.to_string())
                    .or_insert(0) += 1;
                record.steps.push(TranscriptStep {
                    thought,
                    action: AgentAction::Tool(call),
                    observation: Some(result.rendering),
                });
            }
        }
    }

    record.verdict = match verdict {
        Some(v) => v,
        None => {
            record.mandatory_judgment = true;
            let user = judgment_user(
                env.templates,
                &impression,
                &record.plan,
                &render_history(&record.steps),
                &target_text,
            );
            let req = ChatRequest::new(vec![
                Message::system(parts.system.clone()),
                Message::user(user),
            ])
            .with_stop(OBSERVATION_STOP);
            match complete(backend, &req) {
                Ok(resp) => {
                    bump(&mut record.usage, env.ledger, &resp);
                    let mut v = parse_verdict(&resp.text);
                    link_evidence(&mut v, &record.steps, env.graph, target);
                    v
                }
                Err(e) => error_verdict(format!("{BACKEND_FAILURE} judgment: {e}")),
            }
        }
    };
    record.duration_ms = start.elapsed().as_millis() as u64;
    record
}

/// The single-shot retrieval baseline: run a fixed tool sweep, concatenate
/// every rendering into one judgment prompt, and parse the one reply.
pub fn run_rag_baseline(
    target: &Triple,
    truth: Option<Label>,
    env: &SessionEnv,
    config: &SessionConfig,
    backend: &dyn Backend,
) -> SessionRecord {
    let start = Instant::now();
    let mut record = base_record(target, truth, config, Mode::RagBaseline);
    let tool_env = tool_env(env, config, target);
    let target_text = render_target(target, env.graph);

    let mut sweep: Vec<ToolCall> = Vec::new();
    if config.ablations.kg_tools {
        let (h, r, t) = (&target.head, &target.relation, &target.tail);
        sweep.push(ToolCall::new("KG_Definition", vec![h.clone(), "entity".into()]));
        sweep.push(ToolCall::new("KG_Definition", vec![r.clone(), "relation".into()]));
        sweep.push(ToolCall::new("KG_Definition", vec![t.clone(), "entity".into()]));
        sweep.push(ToolCall::new("KG_Neighbor", vec![h.clone(), r.clone()]));
        sweep.push(ToolCall::new("KG_Neighbor", vec![t.clone(), r.clone()]));
        sweep.push(ToolCall::new("KG_Path", vec![h.clone(), t.clone()]));
    }
    if config.ablations.external_tools {
        let h_label = env.graph.label(&target.head).to_string();
        let t_label = env.graph.label(&target.tail).to_string();
        sweep.push(ToolCall::new("Wiki_Evidence", vec![h_label, t_label]));
        sweep.push(ToolCall::new(
            "Web_Evidence",
            vec![format!("Is the fact '{}' true?", memory::verbalize(target, env.graph))],
        ));
    }

    let mut context = String::new();
    for call in sweep {
        let result = dispatch(&call, &tool_env);
        let key = call
            .name()
            .map(|n| n.canonical().to_string())
            .unwrap_or_else(|| call.tool.clone());
        *record.tool_counts.entry(key.clone()).or_insert(0) += 1;
        let _ = writeln!(context, "### {key}({})", call.arguments.join(", "));
        let _ = writeln!(context, "{}", result.rendering);
        record.steps.push(TranscriptStep {
            thought: String::new(),
            action: AgentAction::Tool(call),
            observation: Some(result.rendering),
        });
    }
    let context = if context.is_empty() {
        "(no retrieval performed)".to_string()
    } else {
        context.trim_end().to_string()
    };

    let user = judgment_user(env.templates, "", &record.plan, &context, &target_text);
    let registry_text =
        render_registry(&filtered_registry(config.ablations.kg_tools, config.ablations.external_tools));
    let parts = reasoning_parts(env.templates, &registry_text, &config.judgment_criteria);
    let req = ChatRequest::new(vec![
        Message::system(parts.system),
        Message::user(user),
    ])
    .with_stop(OBSERVATION_STOP);
    record.verdict = match complete(backend, &req) {
        Ok(resp) => {
            bump(&mut record.usage, env.ledger, &resp);
            let mut v = parse_verdict(&resp.text);
            link_evidence(&mut v, &record.steps, env.graph, target);
            v
        }
        Err(e) => error_verdict(format!("{BACKEND_FAILURE} judgment: {e}")),
    };
    record.duration_ms = start.elapsed().as_millis() as u64;
    record
}

fn run_zero_shot(
    target: &Triple,
    truth: Option<Label>,
    env: &SessionEnv,
    config: &SessionConfig,
    backend: &dyn Backend,
) -> SessionRecord {
    let start = Instant::now();
    let mut record = base_record(target, truth, config, Mode::ZeroShot);
    let target_text = render_target(target, env.graph);

    let impression = if config.capture_impression {
        match capture_impression(&target_text, backend, &mut record.usage, env.ledger) {
            Ok(text) => text,
            Err(e) => {
                record.verdict = error_verdict(format!("{BACKEND_FAILURE} impression: {e}"));
                record.duration_ms = start.elapsed().as_millis() as u64;
                return record;
            }
        }
    } else {
        String::new()
    };

    let user = judgment_user(
        env.templates,
        &impression,
        &record.plan,
        "(no investigation performed)",
        &target_text,
    );
    let parts = reasoning_parts(
        env.templates,
        &render_registry(&filtered_registry(false, false)),
        &config.judgment_criteria,
    );
    let req = ChatRequest::new(vec![
        Message::system(parts.system),
        Message::user(user),
    ])
    .with_stop(OBSERVATION_STOP);
    record.verdict = match complete(backend, &req) {
        Ok(resp) => {
            bump(&mut record.usage, env.ledger, &resp);
            parse_verdict(&resp.text)
        }
        Err(e) => error_verdict(format!("{BACKEND_FAILURE} judgment: {e}")),
    };
    record.duration_ms = start.elapsed().as_millis() as u64;
    record
}

/// Run many sessions over a shared environment with a bounded worker pool.
/// Results come back in input order regardless of scheduling.
pub fn run_batch(
    inputs: &[(Triple, Option<Label>)],
    env: &SessionEnv,
    config: &SessionConfig,
    backend: &dyn Backend,
    concurrency: usize,
) -> Vec<SessionRecord> {
    if inputs.is_empty() {
        return Vec::new();
    }
    let workers = concurrency.max(1).min(inputs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SessionRecord>>> = Mutex::new(vec![None; inputs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= inputs.len() {
                    break;
                }
                let (target, truth) = &inputs[i];
                let record = run_session(target, *truth, env, config, backend);
                slots.lock().expect("batch slots")[i] = Some(record);
            });
        }
    });
    slots
        .into_inner()
        .expect("batch slots")
        .into_iter()
        .map(|slot| slot.expect("every input produces a record"))
        .collect()
}
