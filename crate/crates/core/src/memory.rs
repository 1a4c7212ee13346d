//! Expert trajectory bank: curated Think-Act-Observe walkthroughs stored on
//! disk, embedded once at load, and retrieved by task similarity to seed the
//! planner and the reasoning prompt with worked demonstrations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::retrieval::{cosine, DenseVector, Encoder, RetrievalError};
use crate::tools::ToolCall;
use crate::{Label, Triple};

/// The six task categories the bank is curated across.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Classification,
    Human,
    Geography,
    Time,
    Culture,
    Organizational,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Classification,
        Category::Human,
        Category::Geography,
        Category::Time,
        Category::Culture,
        Category::Organizational,
    ];

    pub fn parse(text: &str) -> Option<Category> {
        match text.trim().to_ascii_lowercase().as_str() {
            "classification" => Some(Category::Classification),
            "human" => Some(Category::Human),
            "geography" => Some(Category::Geography),
            "time" => Some(Category::Time),
            "culture" => Some(Category::Culture),
            "organizational" => Some(Category::Organizational),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Classification => "Classification",
            Category::Human => "Human",
            Category::Geography => "Geography",
            Category::Time => "Time",
            Category::Culture => "Culture",
            Category::Organizational => "Organizational",
        }
    }
}

/// What a trajectory step did: invoked a tool, or declared the investigation
/// finished (the final answer itself lives in [`Trajectory::final_answer`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepAction {
    Tool(ToolCall),
    Finish,
}

/// One Think-Act-Observe unit. `observation` is `None` only on a Finish step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryStep {
    pub thought: String,
    pub action: StepAction,
    pub observation: Option<String>,
}

/// The verdict a demonstration ends with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalAnswer {
    pub label: Label,
    pub explanation: String,
}

/// A complete worked verification: the task triple (with the surface labels
/// it was posed under), its category, the step sequence, and the verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub task: Triple,
    pub task_labels: Option<[String; 3]>,
    pub category: Category,
    pub steps: Vec<TrajectoryStep>,
    pub final_answer: FinalAnswer,
}

impl Trajectory {
    /// The task in canonical `head | relation | tail` form, preferring the
    /// stored surface labels over raw ids.
    pub fn verbalized_task(&self) -> String {
        match &self.task_labels {
            Some([h, r, t]) => format!("{h} | {r} | {t}"),
            None => format!(
                "{} | {} | {}",
                self.task.head, self.task.relation, self.task.tail
            ),
        }
    }

    /// The task as it is quoted at the top of a demonstration block.
    fn task_headline(&self) -> String {
        match &self.task_labels {
            Some([h, r, t]) => format!("{h}, {r}, {t}"),
            None => format!(
                "{}, {}, {}",
                self.task.head, self.task.relation, self.task.tail
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("record {index}: {message}")]
    MalformedRecord { index: usize, message: String },
    #[error("record {index}: unknown category '{category}'")]
    UnknownCategory { index: usize, category: String },
    #[error("record {index}: Finish appears before the last step")]
    FinishNotLast { index: usize },
    #[error("record {index}: step {step} has no observation")]
    MissingObservation { index: usize, step: usize },
    #[error("encoder dimension {encoder} does not match bank dimension {bank}")]
    EncoderMismatch { encoder: usize, bank: usize },
    #[error("failed to embed task text")]
    Encode(#[from] RetrievalError),
    #[error("failed to read '{path}'")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Immutable demonstration store. Entries keep file order; each entry's
/// verbalized task is embedded once with the loading encoder.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    entries: Vec<Trajectory>,
    task_vectors: Vec<DenseVector>,
    dimension: usize,
}

impl MemoryBank {
    pub fn empty(dimension: usize) -> Self {
        MemoryBank {
            entries: Vec::new(),
            task_vectors: Vec::new(),
            dimension,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Trajectory] {
        &self.entries
    }

    /// Entry counts per category, for bank composition reports.
    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.entries {
            *counts.entry(t.category).or_insert(0) += 1;
        }
        counts
    }

    /// Serialize back to the line-delimited record format `load_memory`
    /// reads. Loading the result reproduces entries and categories exactly.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.entries {
            let record = RawRecord::from(t);
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// On-disk record shape: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    task: RawTask,
    category: String,
    steps: Vec<RawStep>,
    #[serde(rename = "final")]
    final_answer: RawFinal,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTask {
    head: String,
    relation: String,
    tail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<[String; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawStep {
    thought: String,
    action: RawAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAction {
    tool: String,
    #[serde(default)]
    args: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFinal {
    label: String,
    explanation: String,
}

impl From<&Trajectory> for RawRecord {
    fn from(t: &Trajectory) -> Self {
        RawRecord {
            task: RawTask {
                head: t.task.head.clone(),
                relation: t.task.relation.clone(),
                tail: t.task.tail.clone(),
                labels: t.task_labels.clone(),
            },
            category: t.category.name().to_string(),
            steps: t
                .steps
                .iter()
                .map(|s| RawStep {
                    thought: s.thought.clone(),
                    action: match &s.action {
                        StepAction::Tool(call) => RawAction {
                            tool: call.tool.clone(),
                            args: call.arguments.clone(),
                        },
                        StepAction::Finish => RawAction {
                            tool: "Finish".to_string(),
                            args: Vec::new(),
                        },
                    },
                    observation: s.observation.clone(),
                })
                .collect(),
            final_answer: RawFinal {
                label: t.final_answer.label.to_string(),
                explanation: t.final_answer.explanation.clone(),
            },
        }
    }
}

fn validate_record(index: usize, raw: RawRecord) -> Result<Trajectory, MemoryError> {
    let category =
        Category::parse(&raw.category).ok_or_else(|| MemoryError::UnknownCategory {
            index,
            category: raw.category.clone(),
        })?;
    let label = Label::parse(&raw.final_answer.label).ok_or_else(|| {
        MemoryError::MalformedRecord {
            index,
            message: format!("final label '{}' is not Correct/Incorrect", raw.final_answer.label),
        }
    })?;
    let last = raw.steps.len().saturating_sub(1);
    let mut steps = Vec::with_capacity(raw.steps.len());
    for (i, s) in raw.steps.into_iter().enumerate() {
        let action = if s.action.tool == "Finish" {
            StepAction::Finish
        } else {
            StepAction::Tool(ToolCall {
                tool: s.action.tool,
                arguments: s.action.args,
            })
        };
        match action {
            StepAction::Finish if i != last => {
                return Err(MemoryError::FinishNotLast { index });
            }
            StepAction::Tool(_) if s.observation.is_none() => {
                return Err(MemoryError::MissingObservation {
                    index,
                    step: i + 1,
                });
            }
            _ => {}
        }
        steps.push(TrajectoryStep {
            thought: s.thought,
            action,
            observation: s.observation,
        });
    }
    Ok(Trajectory {
        task: Triple::new(raw.task.head, raw.task.relation, raw.task.tail),
        task_labels: raw.task.labels,
        category,
        steps,
        final_answer: FinalAnswer {
            label,
            explanation: raw.final_answer.explanation,
        },
    })
}

/// Load a bank from a line-delimited record file, embedding every task with
/// `enc`. Record indices in errors are 1-based line numbers; blank lines are
/// skipped.
pub fn load_memory(path: &Path, enc: &dyn Encoder) -> Result<MemoryBank, MemoryError> {
    let text = std::fs::read_to_string(path).map_err(|source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_memory_str(&text, enc)
}

/// Same as [`load_memory`], from in-memory text.
pub fn load_memory_str(text: &str, enc: &dyn Encoder) -> Result<MemoryBank, MemoryError> {
    let mut bank = MemoryBank::empty(enc.dimension());
    for (lineno, line) in text.lines().enumerate() {
        let index = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| MemoryError::MalformedRecord {
                index,
                message: e.to_string(),
            })?;
        let trajectory = validate_record(index, raw)?;
        let vector = enc.encode(&trajectory.verbalized_task())?;
        bank.entries.push(trajectory);
        bank.task_vectors.push(vector);
    }
    Ok(bank)
}

/// Write the bank back out in the load format.
pub fn save_memory(path: &Path, bank: &MemoryBank) -> Result<(), MemoryError> {
    std::fs::write(path, bank.to_jsonl()).map_err(|source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Canonical `head | relation | tail` text for a query triple, using catalog
/// labels when the graph knows the ids and the raw ids otherwise.
pub fn verbalize(t: &Triple, g: &KnowledgeGraph) -> String {
    format!(
        "{} | {} | {}",
        g.label(&t.head),
        g.label(&t.relation),
        g.label(&t.tail)
    )
}

/// Top-k most similar demonstrations for `query`, by cosine between the
/// embedded verbalized query and the bank's task vectors. Descending score;
/// ties keep entry order; saturates at the bank size.
pub fn retrieve<'a>(
    bank: &'a MemoryBank,
    query: &Triple,
    k: usize,
    enc: &dyn Encoder,
    g: &KnowledgeGraph,
) -> Result<Vec<&'a Trajectory>, MemoryError> {
    if enc.dimension() != bank.dimension {
        return Err(MemoryError::EncoderMismatch {
            encoder: enc.dimension(),
            bank: bank.dimension,
        });
    }
    if bank.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let query_vec = enc.encode(&verbalize(query, g))?;
    let mut scored: Vec<(usize, f64)> = bank
        .task_vectors
        .iter()
        .enumerate()
        // A degenerate (zero) vector cannot be similar to anything; score 0.
        .map(|(i, v)| (i, cosine(&query_vec, v).unwrap_or(0.0)))
        .collect();
    // Stable sort: equal scores keep entry order.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, _)| &bank.entries[i])
        .collect())
}

/// Render one demonstration as the numbered Thought/Action/Observation block
/// the prompts embed. Byte-stable: same trajectory, same text.
pub fn render_trajectory(t: &Trajectory) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Target Triple: \"{}\"", t.task_headline());
    for (i, step) in t.steps.iter().enumerate() {
        let n = i + 1;
        let _ = writeln!(out, "Thought {n}: {}", step.thought);
        if let StepAction::Tool(call) = &step.action {
            let _ = writeln!(out, "Action {n}: {}({})", call.tool, call.arguments.join(", "));
        }
        if let Some(obs) = &step.observation {
            let _ = writeln!(out, "Observation {n}:");
            let _ = writeln!(out, "{obs}");
        }
    }
    let _ = write!(
        out,
        "Final Answer: [{}] Because {}",
        t.final_answer.label, t.final_answer.explanation
    );
    out
}

/// Render the retrieved demonstrations for the planning and reasoning
/// prompts, blank-line separated, oldest rank first.
pub fn render_demonstrations(trajectories: &[&Trajectory]) -> String {
    if trajectories.is_empty() {
        return "(No similar verification cases available.)".to_string();
    }
    trajectories
        .iter()
        .map(|t| render_trajectory(t))
        .collect::<Vec<_>>()
        .join("\n\n")
}
