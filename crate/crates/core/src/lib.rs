//! Agentic knowledge-graph triple verification.
//!
//! Given a candidate fact `(head, relation, tail)`, this crate drives a
//! tool-using language-model agent that plans an investigation, probes the
//! graph's own structure (definitions, neighborhoods, connecting paths),
//! cross-checks against external text evidence (encyclopedia articles, web
//! search snippets), and emits a `Correct`/`Incorrect` verdict together with
//! a traceable evidence chain. A scripted model backend and offline evidence
//! fixtures make every run reproducible without network access.
//!
//! The crate also ships the full evaluation harness: type-constrained hard
//! negative sampling, balanced test-set construction, classification metrics,
//! decision-threshold search, and tool-usage/cost reporting.
//!
//! Module map:
//!
//! - [`kg`] — graph loading, indexing, membership, neighbor queries, and
//!   two-stage name resolution.
//! - [`retrieval`] — dense encoders, BM25 lexical scoring, and the hybrid
//!   re-ranking function shared by every text-recall tool.
//! - [`tools`] — the five-tool registry, bounded bidirectional path search,
//!   evidence providers, and the dispatcher.
//! - [`memory`] — expert trajectory storage and similarity retrieval.
//! - [`llm`] — chat backends (remote and scripted) with usage accounting.
//! - [`agent`] — the Think-Act-Observe verification loop, prompt templates,
//!   verdict parsing, and batch execution.
//! - [`bench`] — negative sampling, metrics, threshold search, and run
//!   statistics.
//!
//! See the book under `book/` for a guided tour.

pub mod agent;
pub mod bench;
pub mod http;
pub mod kg;
pub mod llm;
pub mod memory;
pub mod retrieval;
pub mod tools;

pub use kg::{KnowledgeGraph, Triple};
pub use tools::{ToolCall, ToolResult};

/// Binary verdict attached to a triple, whether as ground truth or as the
/// agent's judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Label {
    Correct,
    Incorrect,
}

impl Label {
    /// Parse the surface forms used in model output and record files.
    pub fn parse(text: &str) -> Option<Label> {
        match text.trim().to_ascii_lowercase().as_str() {
            "correct" | "true" => Some(Label::Correct),
            "incorrect" | "false" => Some(Label::Incorrect),
            _ => None,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Correct => Label::Incorrect,
            Label::Incorrect => Label::Correct,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Correct => write!(f, "Correct"),
            Label::Incorrect => write!(f, "Incorrect"),
        }
    }
}
