//! Evaluation harness: type-constrained negative sampling, balanced test-set
//! construction, classification metrics, decision-threshold search, and
//! tool-usage statistics.
//!
//! Everything here is pure given its seed, so any set, score, or report can
//! be regenerated exactly. Negatives are hard by construction: a corruption
//! swaps one side of a true triple for a different entity with the identical
//! type signature, and by default the swap is rejected when it lands on
//! another known fact.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::SessionRecord;
use crate::kg::KnowledgeGraph;
use crate::llm::{Pricing, Usage};
use crate::{Label, Triple};

/// Pool key for entities with no typing edges at all.
pub const UNTYPED_SIGNATURE: &str = "__untyped__";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("predictions and truths differ in length: {predictions} vs {truths}")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("threshold search needs at least one scored example")]
    EmptyScores,
    #[error("threshold search requires finite scores")]
    NonFiniteScore,
    #[error("a balanced test set needs an even, non-zero sample count, got {0}")]
    UnevenSampleCount(usize),
    #[error("requested {requested} samples but only {available} positives are available")]
    InsufficientPositives { requested: usize, available: usize },
    #[error("only {produced} of {needed} corruptions succeeded; the candidate pools are too small")]
    CorruptionShortfall { needed: usize, produced: usize },
    #[error("{path}:{line}: bad test-set record: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where a labeled example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Original,
    CorruptedHead,
    CorruptedTail,
}

/// One evaluation example: a triple with its ground-truth label and enough
/// metadata to trace a negative back to the positive it corrupts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub label: Label,
    pub provenance: Provenance,
    /// The positive a corruption came from; `None` for originals.
    pub source: Option<Triple>,
    /// True when the replacement came from the any-shared-type fallback pool
    /// rather than the exact-signature pool.
    pub pool_fallback: bool,
}

/// Entities partitioned by full type signature. Two entities share a pool
/// exactly when their sorted sets of typing objects are identical; entities
/// with no typing edges share the [`UNTYPED_SIGNATURE`] pool. All pools are
/// sorted, so sampling from them is reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeIndex {
    pools: BTreeMap<Vec<String>, Vec<String>>,
    by_type: BTreeMap<String, Vec<String>>,
    signatures: HashMap<String, Vec<String>>,
}

impl TypeIndex {
    /// The signature key of `entity`, if the entity is indexed.
    pub fn signature_of(&self, entity: &str) -> Option<&[String]> {
        self.signatures.get(entity).map(Vec::as_slice)
    }

    /// The pool `entity` belongs to (including the entity itself).
    pub fn pool_of(&self, entity: &str) -> &[String] {
        self.signature_of(entity)
            .and_then(|sig| self.pools.get(sig))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Every entity sharing at least one real type with `entity`, sorted and
    /// deduplicated. Empty for untyped entities.
    pub fn shared_type_pool(&self, entity: &str) -> Vec<String> {
        let Some(sig) = self.signature_of(entity) else {
            return Vec::new();
        };
        let mut out: Vec<String> = sig
            .iter()
            .filter(|t| t.as_str() != UNTYPED_SIGNATURE)
            .flat_map(|t| self.by_type.get(t).into_iter().flatten().cloned())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn pools(&self) -> impl Iterator<Item = (&Vec<String>, &Vec<String>)> {
        self.pools.iter()
    }

    pub fn pool_count(&self) -> usize {
        self.pools.len()
    }
}

/// Partition the graph's entities by type signature. Signatures come from
/// the typing relations the graph was loaded with.
pub fn build_type_index(g: &KnowledgeGraph) -> TypeIndex {
    let mut pools: BTreeMap<Vec<String>, Vec<String>> = BTreeMap::new();
    let mut by_type: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut signatures = HashMap::new();
    for e in g.entities() {
        let signature: Vec<String> = if e.type_signature.is_empty() {
            vec![UNTYPED_SIGNATURE.to_string()]
        } else {
            e.type_signature.clone()
        };
        pools
            .entry(signature.clone())
            .or_default()
            .push(e.id.clone());
        for t in &e.type_signature {
            by_type.entry(t.clone()).or_default().push(e.id.clone());
        }
        signatures.insert(e.id.clone(), signature);
    }
    for pool in pools.values_mut() {
        pool.sort();
    }
    for pool in by_type.values_mut() {
        pool.sort();
    }
    TypeIndex {
        pools,
        by_type,
        signatures,
    }
}

/// Corrupt one side of `positive`, uniformly choosing the side and then the
/// replacement among valid candidates. A candidate is valid when it differs
/// from the original entity and (with `exclude_known_facts`) the corrupted
/// triple is absent from the graph. Falls back to the any-shared-type pool
/// when the exact-signature pool has no valid candidate, and to `None` when
/// that is empty too.
fn corrupt_one(
    positive: &Triple,
    g: &KnowledgeGraph,
    idx: &TypeIndex,
    rng: &mut ChaCha8Rng,
    exclude_known_facts: bool,
) -> Option<LabeledTriple> {
    let corrupt_head = rng.gen_bool(0.5);
    let original = if corrupt_head {
        &positive.head
    } else {
        &positive.tail
    };
    let build = |replacement: &str| {
        if corrupt_head {
            Triple::new(replacement, &positive.relation, &positive.tail)
        } else {
            Triple::new(&positive.head, &positive.relation, replacement)
        }
    };
    let valid = |replacement: &str| {
        replacement != original && (!exclude_known_facts || !crate::kg::contains(g, &build(replacement)))
    };

    // Uniform over valid candidates equals rejection sampling over the raw
    // pool, without the unbounded loop.
    let exact: Vec<&String> = idx
        .pool_of(original)
        .iter()
        .filter(|e| valid(e))
        .collect();
    let (replacement, pool_fallback) = if !exact.is_empty() {
        (exact[rng.gen_range(0..exact.len())].clone(), false)
    } else {
        let shared: Vec<String> = idx
            .shared_type_pool(original)
            .into_iter()
            .filter(|e| valid(e))
            .collect();
        if shared.is_empty() {
            return None;
        }
        (shared[rng.gen_range(0..shared.len())].clone(), true)
    };

    Some(LabeledTriple {
        triple: build(&replacement),
        label: Label::Incorrect,
        provenance: if corrupt_head {
            Provenance::CorruptedHead
        } else {
            Provenance::CorruptedTail
        },
        source: Some(positive.clone()),
        pool_fallback,
    })
}

/// One hard negative per positive, skipping (with a logged warning) any
/// positive whose candidate pools are exhausted. Empty input yields empty
/// output.
pub fn sample_negatives(
    positives: &[Triple],
    g: &KnowledgeGraph,
    idx: &TypeIndex,
    seed: u64,
    exclude_known_facts: bool,
) -> Vec<LabeledTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len());
    for positive in positives {
        match corrupt_one(positive, g, idx, &mut rng, exclude_known_facts) {
            Some(negative) => out.push(negative),
            None => log::warn!(
                "no valid type-constrained replacement for ({}, {}, {}); skipping",
                positive.head,
                positive.relation,
                positive.tail
            ),
        }
    }
    out
}

/// Build a strictly balanced evaluation set: `n` positives sampled without
/// replacement, a uniformly chosen half of them corrupted into negatives
/// (each replacing its source), the rest kept as-is, all shuffled by the
/// seed. When a corruption fails, the next unused positive is corrupted
/// instead, so the output is still exactly `n/2` per class or an error.
pub fn build_testset(
    test_positives: &[Triple],
    g: &KnowledgeGraph,
    idx: &TypeIndex,
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledTriple>, BenchError> {
    if n == 0 || n % 2 != 0 {
        return Err(BenchError::UnevenSampleCount(n));
    }
    if test_positives.len() < n {
        return Err(BenchError::InsufficientPositives {
            requested: n,
            available: test_positives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..test_positives.len()).collect();
    order.shuffle(&mut rng);

    let half = n / 2;
    let mut out: Vec<LabeledTriple> = Vec::with_capacity(n);
    let mut cursor = order.iter();
    for &i in cursor.by_ref().take(half) {
        out.push(LabeledTriple {
            triple: test_positives[i].clone(),
            label: Label::Correct,
            provenance: Provenance::Original,
            source: None,
            pool_fallback: false,
        });
    }
    let mut produced = 0;
    for &i in cursor {
        if produced == half {
            break;
        }
        match corrupt_one(&test_positives[i], g, idx, &mut rng, true) {
            Some(negative) => {
                out.push(negative);
                produced += 1;
            }
            None => log::warn!(
                "corruption failed for ({}, {}, {}); trying the next positive",
                test_positives[i].head,
                test_positives[i].relation,
                test_positives[i].tail
            ),
        }
    }
    if produced < half {
        return Err(BenchError::CorruptionShortfall {
            needed: half,
            produced,
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Classification counts. The positive class is [`Label::Correct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

impl Metrics {
    /// Accuracy = (TP+TN)/total, Precision = TP/(TP+FP), Recall = TP/(TP+FN),
    /// F1 = harmonic mean of the two. Zero denominators yield 0.
    pub fn from_confusion(confusion: Confusion) -> Metrics {
        let tp = confusion.true_positives as f64;
        let fp = confusion.false_positives as f64;
        let tn = confusion.true_negatives as f64;
        let fn_count = confusion.false_negatives as f64;
        let total = tp + fp + tn + fn_count;
        let accuracy = if total == 0.0 { 0.0 } else { (tp + tn) / total };
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_count == 0.0 {
            0.0
        } else {
            tp / (tp + fn_count)
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy,
            precision,
            recall,
            f1,
            confusion,
        }
    }
}

/// Score predictions against ground truth. A `None` prediction (refusal or
/// malformed final answer) is penalized as the wrong class: it becomes a
/// false negative on a true example and a false positive on a false one.
pub fn compute_metrics(
    predictions: &[Option<Label>],
    truths: &[Label],
) -> Result<Metrics, BenchError> {
    if predictions.len() != truths.len() {
        return Err(BenchError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut confusion = Confusion::default();
    for (prediction, truth) in predictions.iter().zip(truths) {
        match truth {
            Label::Correct => {
                if *prediction == Some(Label::Correct) {
                    confusion.true_positives += 1;
                } else {
                    confusion.false_negatives += 1;
                }
            }
            Label::Incorrect => {
                if *prediction == Some(Label::Incorrect) {
                    confusion.true_negatives += 1;
                } else {
                    confusion.false_positives += 1;
                }
            }
        }
    }
    Ok(Metrics::from_confusion(confusion))
}

/// Extract (prediction, truth) pairs from session records and score them.
/// Records without ground truth are skipped.
pub fn metrics_from_records(records: &[SessionRecord]) -> Metrics {
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for record in records {
        let Some(truth) = record.truth else { continue };
        let prediction = if record.verdict.valid_format {
            record.verdict.label
        } else {
            None
        };
        predictions.push(prediction);
        truths.push(truth);
    }
    compute_metrics(&predictions, &truths).expect("lengths match by construction")
}

/// Which way a baseline's score points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreDirection {
    /// Predict true when the score exceeds the threshold.
    HigherIsTrue,
    /// Predict true when the score falls below the threshold.
    LowerIsTrue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub delta: f64,
    pub accuracy: f64,
}

/// Find the decision threshold maximizing accuracy. Candidates are the
/// midpoints between consecutive distinct scores plus the two infinities
/// (predict-everything-true and predict-everything-false); among maximizers
/// the smallest delta wins.
pub fn threshold_search(
    scores: &[f64],
    truths: &[Label],
    direction: ScoreDirection,
) -> Result<ThresholdResult, BenchError> {
    if scores.is_empty() {
        return Err(BenchError::EmptyScores);
    }
    if scores.len() != truths.len() {
        return Err(BenchError::LengthMismatch {
            predictions: scores.len(),
            truths: truths.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(BenchError::NonFiniteScore);
    }
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(f64::INFINITY);

    let accuracy_at = |delta: f64| {
        let correct = scores
            .iter()
            .zip(truths)
            .filter(|(score, truth)| {
                let predicted_true = match direction {
                    ScoreDirection::HigherIsTrue => **score > delta,
                    ScoreDirection::LowerIsTrue => **score < delta,
                };
                predicted_true == (**truth == Label::Correct)
            })
            .count();
        correct as f64 / scores.len() as f64
    };

    // Ascending candidates, strict improvement only: the first maximizer is
    // the smallest.
    let mut best = ThresholdResult {
        delta: candidates[0],
        accuracy: accuracy_at(candidates[0]),
    };
    for &delta in &candidates[1..] {
        let accuracy = accuracy_at(delta);
        if accuracy > best.accuracy {
            best = ThresholdResult { delta, accuracy };
        }
    }
    Ok(best)
}

/// Batch-level usage and tool-utilization report. Tool figures cover only
/// correctly predicted sessions; the averages cover every session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sessions: usize,
    pub correct_sessions: usize,
    /// Raw dispatch counts over correct sessions; values sum to the total
    /// tool calls those sessions made.
    pub tool_counts: BTreeMap<String, u64>,
    /// `tool_counts` normalized to fractions of the total.
    pub tool_frequencies: BTreeMap<String, f64>,
    pub avg_turns: f64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
    pub avg_cost: f64,
    pub currency: String,
    /// Set when the tool table is empty because nothing was predicted
    /// correctly.
    pub note: Option<String>,
}

pub fn aggregate_stats(sessions: &[SessionRecord], pricing: &Pricing) -> StatsReport {
    let correct: Vec<&SessionRecord> = sessions
        .iter()
        .filter(|s| s.is_correct() == Some(true))
        .collect();
    let mut tool_counts: BTreeMap<String, u64> = BTreeMap::new();
    for session in &correct {
        for (tool, count) in &session.tool_counts {
            *tool_counts.entry(tool.clone()).or_insert(0) += *count as u64;
        }
    }
    let total_calls: u64 = tool_counts.values().sum();
    let tool_frequencies: BTreeMap<String, f64> = tool_counts
        .iter()
        .map(|(tool, count)| (tool.clone(), *count as f64 / total_calls.max(1) as f64))
        .collect();

    let n = sessions.len().max(1) as f64;
    let turns: u64 = sessions.iter().map(|s| s.usage.turns).sum();
    let input: u64 = sessions.iter().map(|s| s.usage.input_tokens).sum();
    let output: u64 = sessions.iter().map(|s| s.usage.output_tokens).sum();
    let cost: f64 = sessions
        .iter()
        .map(|s| {
            pricing.cost(&Usage {
                input_tokens: s.usage.input_tokens,
                output_tokens: s.usage.output_tokens,
            })
        })
        .sum();

    StatsReport {
        sessions: sessions.len(),
        correct_sessions: correct.len(),
        tool_counts,
        tool_frequencies,
        avg_turns: turns as f64 / n,
        avg_input_tokens: input as f64 / n,
        avg_output_tokens: output as f64 / n,
        avg_cost: cost / n,
        currency: pricing.currency.clone(),
        note: correct
            .is_empty()
            .then(|| "no correctly predicted sessions; tool utilization is empty".to_string()),
    }
}

/// Metrics as the usual percentage table.
pub fn render_metrics(metrics: &Metrics) -> String {
    let c = &metrics.confusion;
    format!(
        "Accuracy: {:.1}\nPrecision: {:.1}\nRecall: {:.1}\nF1: {:.1}\n\
         Confusion: TP={} FP={} TN={} FN={}",
        metrics.accuracy * 100.0,
        metrics.precision * 100.0,
        metrics.recall * 100.0,
        metrics.f1 * 100.0,
        c.true_positives,
        c.false_positives,
        c.true_negatives,
        c.false_negatives
    )
}

/// Plain-text statistics table: averages first, then the tool-utilization
/// distribution over correctly predicted samples.
pub fn render_stats_report(report: &StatsReport) -> String {
    let mut out = format!(
        "Sessions: {} ({} correct)\nAvg. interaction turns: {:.2}\n\
         Avg. input tokens: {:.2}\nAvg. output tokens: {:.2}\n\
         Avg. cost per sample: {:.6} {}\n\
         Tool utilization over correct predictions:",
        report.sessions,
        report.correct_sessions,
        report.avg_turns,
        report.avg_input_tokens,
        report.avg_output_tokens,
        report.avg_cost,
        report.currency
    );
    if let Some(note) = &report.note {
        out.push_str(&format!("\n  ({note})"));
    } else {
        for (tool, frequency) in &report.tool_frequencies {
            out.push_str(&format!(
                "\n  {:<16} {:>6.1}% ({})",
                tool,
                frequency * 100.0,
                report.tool_counts[tool]
            ));
        }
    }
    out
}

/// Flat line-record form of [`LabeledTriple`] used in test-set files.
#[derive(Serialize, Deserialize)]
struct TestsetRecord {
    head: String,
    relation: String,
    tail: String,
    label: Label,
    provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<Triple>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pool_fallback: bool,
}

impl From<&LabeledTriple> for TestsetRecord {
    fn from(lt: &LabeledTriple) -> Self {
        TestsetRecord {
            head: lt.triple.head.clone(),
            relation: lt.triple.relation.clone(),
            tail: lt.triple.tail.clone(),
            label: lt.label,
            provenance: lt.provenance,
            source: lt.source.clone(),
            pool_fallback: lt.pool_fallback,
        }
    }
}

impl From<TestsetRecord> for LabeledTriple {
    fn from(record: TestsetRecord) -> Self {
        LabeledTriple {
            triple: Triple::new(record.head, record.relation, record.tail),
            label: record.label,
            provenance: record.provenance,
            source: record.source,
            pool_fallback: record.pool_fallback,
        }
    }
}

/// Write one JSON record per line: head, relation, tail, label, provenance,
/// and (for negatives) the source positive.
pub fn save_testset(path: &Path, set: &[LabeledTriple]) -> Result<(), BenchError> {
    let mut out = String::new();
    for example in set {
        let record = TestsetRecord::from(example);
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_testset(path: &Path) -> Result<Vec<LabeledTriple>, BenchError> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_testset_str(&text, &path.display().to_string())
}

/// Same as [`load_testset`], from in-memory text. `origin` names the source
/// in parse errors.
pub fn load_testset_str(text: &str, origin: &str) -> Result<Vec<LabeledTriple>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TestsetRecord =
            serde_json::from_str(line).map_err(|e| BenchError::MalformedRecord {
                path: origin.to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.push(LabeledTriple::from(record));
    }
    Ok(out)
}
