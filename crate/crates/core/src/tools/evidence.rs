//! External text evidence: encyclopedia articles and web search snippets.
//!
//! Both tools sit behind provider traits with offline fixture
//! implementations, so the whole pipeline runs deterministically without
//! network access; live HTTP adapters implement the same traits (see the
//! `http` module). Provider failures surface as error-status observations,
//! never as aborted sessions.

use std::collections::HashMap;
use std::fs;
use std::path::Path as FsPath;

use thiserror::Error;

use super::{resolve_name, EvidenceBody, EvidenceItem, ToolEnv, ToolResult};
use crate::kg::{normalize_name, TargetKind};
use crate::retrieval::{self, top_k};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider transport: {0}")]
    Transport(String),
    #[error("{path}:{line}: {reason}")]
    MalformedFixture {
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
}

/// One encyclopedia document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Article {
    pub title: String,
    pub text: String,
}

/// One web search result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub text: String,
    pub source: String,
}

pub trait WikiProvider: Send + Sync {
    /// Fetch the article titled `title`, if one exists. Title matching is
    /// case-insensitive and whitespace-normalized.
    fn article(&self, title: &str) -> Result<Option<Article>, ProviderError>;
}

pub trait WebProvider: Send + Sync {
    /// Search for `question`, returning snippets best-first.
    fn search(&self, question: &str) -> Result<Vec<Snippet>, ProviderError>;
}

/// Offline corpus loaded from a `title<TAB>full-text` file.
#[derive(Debug, Clone, Default)]
pub struct FixtureWiki {
    by_title: HashMap<String, Article>,
}

impl FixtureWiki {
    pub fn load(path: &FsPath) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path).map_err(|source| ProviderError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut by_title = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (title, body) =
                line.split_once('\t')
                    .ok_or_else(|| ProviderError::MalformedFixture {
                        path: path.display().to_string(),
                        line: i + 1,
                        reason: "expected title<TAB>full-text".to_string(),
                    })?;
            by_title.insert(
                normalize_name(title),
                Article {
                    title: title.to_string(),
                    text: body.to_string(),
                },
            );
        }
        Ok(FixtureWiki { by_title })
    }

    pub fn from_articles(articles: impl IntoIterator<Item = Article>) -> Self {
        FixtureWiki {
            by_title: articles
                .into_iter()
                .map(|a| (normalize_name(&a.title), a))
                .collect(),
        }
    }
}

impl WikiProvider for FixtureWiki {
    fn article(&self, title: &str) -> Result<Option<Article>, ProviderError> {
        Ok(self.by_title.get(&normalize_name(title)).cloned())
    }
}

/// Offline search results from a `normalized-question<TAB>snippet1 ||| ...`
/// file. Question keys are normalized with [`normalize_question`]; a snippet
/// ending in `(Source: X)` carries X as its source tag.
#[derive(Debug, Clone, Default)]
pub struct FixtureWeb {
    by_question: HashMap<String, Vec<Snippet>>,
}

/// Canonical form of a search question: lowercased alphanumeric tokens
/// joined by single spaces.
pub fn normalize_question(question: &str) -> String {
    retrieval::tokenize(question).join(" ")
}

fn parse_snippet(raw: &str) -> Snippet {
    let raw = raw.trim();
    if let Some(open) = raw.rfind("(Source:") {
        if raw.ends_with(')') {
            let source = raw[open + "(Source:".len()..raw.len() - 1].trim();
            return Snippet {
                text: raw.to_string(),
                source: source.to_string(),
            };
        }
    }
    Snippet {
        text: raw.to_string(),
        source: "web".to_string(),
    }
}

impl FixtureWeb {
    pub fn load(path: &FsPath) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path).map_err(|source| ProviderError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut by_question = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (question, rest) =
                line.split_once('\t')
                    .ok_or_else(|| ProviderError::MalformedFixture {
                        path: path.display().to_string(),
                        line: i + 1,
                        reason: "expected question<TAB>snippets".to_string(),
                    })?;
            let snippets: Vec<Snippet> = rest
                .split(" ||| ")
                .filter(|s| !s.trim().is_empty())
                .map(parse_snippet)
                .collect();
            by_question.insert(normalize_question(question), snippets);
        }
        Ok(FixtureWeb { by_question })
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Vec<Snippet>)>,
    ) -> Self {
        FixtureWeb {
            by_question: entries
                .into_iter()
                .map(|(q, s)| (normalize_question(&q), s))
                .collect(),
        }
    }
}

impl WebProvider for FixtureWeb {
    fn search(&self, question: &str) -> Result<Vec<Snippet>, ProviderError> {
        Ok(self
            .by_question
            .get(&normalize_question(question))
            .cloned()
            .unwrap_or_default())
    }
}

/// Split text into sentences on terminal punctuation. Keeps the terminator.
fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let s = current.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            current.clear();
        }
    }
    let tail = current.trim().to_string();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Leading summary of an article: its first three sentences.
fn summarize(article: &Article) -> String {
    let all = sentences(&article.text);
    all.iter().take(3).cloned().collect::<Vec<_>>().join(" ")
}

/// Token positions (start, end exclusive) where `phrase` occurs as a
/// contiguous token subsequence of `tokens`.
fn phrase_positions(tokens: &[String], phrase: &str) -> Vec<(usize, usize)> {
    let needle = retrieval::tokenize(phrase);
    if needle.is_empty() || needle.len() > tokens.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for start in 0..=(tokens.len() - needle.len()) {
        if tokens[start..start + needle.len()] == needle[..] {
            out.push((start, start + needle.len()));
        }
    }
    out
}

/// Gap in whole tokens between two phrase occurrences (0 when adjacent or
/// overlapping).
fn token_gap(a: (usize, usize), b: (usize, usize)) -> usize {
    if a.1 <= b.0 {
        b.0 - a.1
    } else if b.1 <= a.0 {
        a.0 - b.1
    } else {
        0
    }
}

/// Sentences of `text` in which `a` and `b` both occur within `tau` tokens
/// of each other. Multi-sentence windows are not stitched: a pair must fall
/// inside one sentence to count, keeping the returned evidence quotable.
fn co_occurrence_sentences(text: &str, a: &str, b: &str, tau: usize) -> Vec<String> {
    let mut hits = Vec::new();
    for sentence in sentences(text) {
        let tokens = retrieval::tokenize(&sentence);
        let pos_a = phrase_positions(&tokens, a);
        let pos_b = phrase_positions(&tokens, b);
        let close = pos_a
            .iter()
            .any(|&pa| pos_b.iter().any(|&pb| token_gap(pa, pb) <= tau));
        if close && !hits.contains(&sentence) {
            hits.push(sentence);
        }
    }
    hits
}

/// The `Wiki_Evidence` tool. One argument: article summary for the entity.
/// Two arguments: sentences where both entities co-occur within the
/// configured word distance, re-ranked by hybrid relevance to "a b".
pub fn wiki_evidence(args: &[String], provider: &dyn WikiProvider, env: &ToolEnv) -> ToolResult {
    // Prefer the catalog label (articles are titled by label), fall back to
    // the surface form as given.
    let lookup_title = |name: &str| -> String {
        resolve_name(env.graph, name, TargetKind::Entity, env.encoder)
            .map(|id| env.graph.label(&id).to_string())
            .unwrap_or_else(|| name.to_string())
    };

    match args {
        [entity] => {
            let title = lookup_title(entity);
            match provider.article(&title) {
                Ok(Some(article)) => {
                    let summary = summarize(&article);
                    ToolResult::ok(
                        format!("Wikipedia summary for {}:\n{summary}", article.title),
                        vec![EvidenceItem {
                            body: EvidenceBody::Snippet(summary),
                            source: article.title.clone(),
                        }],
                    )
                }
                Ok(None) => ToolResult::empty(format!(
                    "No Wikipedia article found for '{entity}'."
                )),
                Err(e) => ToolResult::error(format!("Wiki_Evidence failed: {e}")),
            }
        }
        [a, b] => {
            let (title_a, title_b) = (lookup_title(a), lookup_title(b));
            let mut corpus: Vec<Article> = Vec::new();
            for title in [&title_a, &title_b] {
                match provider.article(title) {
                    Ok(Some(article)) => {
                        if !corpus.iter().any(|c| c.title == article.title) {
                            corpus.push(article);
                        }
                    }
                    Ok(None) => {}
                    Err(e) => return ToolResult::error(format!("Wiki_Evidence failed: {e}")),
                }
            }
            if corpus.is_empty() {
                return ToolResult::empty(format!(
                    "No Wikipedia article found for '{a}' or '{b}'."
                ));
            }
            let mut pool: Vec<(String, String)> = Vec::new();
            let mut origin: HashMap<String, String> = HashMap::new();
            for article in &corpus {
                for (i, sentence) in
                    co_occurrence_sentences(&article.text, &title_a, &title_b, env.limits.tau_words)
                        .into_iter()
                        .enumerate()
                {
                    let id = format!("{}#{i:03}", article.title);
                    origin.insert(id.clone(), article.title.clone());
                    pool.push((id, sentence));
                }
            }
            if pool.is_empty() {
                return ToolResult::empty(format!(
                    "No sentence mentions both '{title_a}' and '{title_b}' within {} words.",
                    env.limits.tau_words
                ));
            }
            let query = format!("{title_a} {title_b}");
            let ranked =
                match top_k(&query, &pool, env.limits.snippet_limit, &env.hybrid, env.encoder) {
                    Ok(r) => r,
                    Err(e) => return ToolResult::error(format!("Wiki_Evidence failed: {e}")),
                };
            let text_of: HashMap<&str, &str> = pool
                .iter()
                .map(|(id, text)| (id.as_str(), text.as_str()))
                .collect();
            let mut lines = vec![format!(
                "Sentences mentioning both {title_a} and {title_b}:"
            )];
            let mut payload = Vec::new();
            for (id, _) in &ranked {
                let sentence = text_of[id.as_str()].to_string();
                lines.push(format!("- {sentence}"));
                payload.push(EvidenceItem {
                    body: EvidenceBody::Snippet(sentence),
                    source: origin[id].clone(),
                });
            }
            ToolResult::ok(lines.join("\n"), payload)
        }
        _ => ToolResult::error("Wiki_Evidence expects 1 or 2 arguments.".to_string()),
    }
}

/// The `Web_Evidence` tool: up to `limit` search snippets for the question.
pub fn web_evidence(question: &str, provider: &dyn WebProvider, limit: usize) -> ToolResult {
    if question.trim().is_empty() {
        return ToolResult::error("Web_Evidence needs a non-empty question.".to_string());
    }
    match provider.search(question) {
        Ok(snippets) if snippets.is_empty() => {
            ToolResult::empty("No relevant webpages found (API returned empty).".to_string())
        }
        Ok(snippets) => {
            let kept: Vec<Snippet> = snippets.into_iter().take(limit).collect();
            let lines: Vec<String> = kept
                .iter()
                .enumerate()
                .map(|(i, s)| format!("Snippet {}: {}", i + 1, s.text))
                .collect();
            let payload = kept
                .into_iter()
                .map(|s| EvidenceItem {
                    body: EvidenceBody::Snippet(s.text),
                    source: s.source,
                })
                .collect();
            ToolResult::ok(lines.join("\n"), payload)
        }
        Err(e) => ToolResult::error(format!("Web_Evidence failed: {e}")),
    }
}
