//! `verify`: run verification sessions over a test set or a single claim
//! and write one replayable session record per input.

use std::path::Path;

use kgverify::agent::{run_batch, SessionEnv, SessionRecord};
use kgverify::bench::load_testset_str;
use kgverify::kg::{resolve, TargetKind, Triple};
use kgverify::llm::UsageLedger;
use kgverify::Label;

use crate::artifacts::{self, Header};
use crate::config::{self, Effective};
use crate::error::{usage, CliError};
use crate::wiring;

pub fn run(
    eff: &Effective,
    triple: Option<&str>,
    testset: Option<&Path>,
    out: Option<&Path>,
    cap: Option<usize>,
) -> Result<(), CliError> {
    let (graph, _) = wiring::load_graph_cached(eff)?;
    let world = wiring::build_world(eff, graph)?;
    let backend = wiring::build_backend(eff)?;
    let session_config = config::session_config(&eff.config)?;

    let single = triple.is_some();
    let mut inputs: Vec<(Triple, Option<Label>)> = match (triple, testset) {
        (Some(text), None) => vec![(resolve_claim(&world, text)?, None)],
        (None, Some(path)) => load_inputs(eff, path)?,
        (None, None) => {
            return Err(usage("nothing to verify: pass --triple or --testset"));
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --triple with --testset"),
    };
    if let Some(n) = cap {
        inputs.truncate(n);
    }
    if inputs.is_empty() {
        return Err(usage("the test set has no entries"));
    }

    let concurrency = eff.config.session.concurrency;
    if eff.config.backend.kind == "scripted"
        && !eff.config.backend.stateless
        && concurrency > 1
        && inputs.len() > 1
    {
        log::warn!(
            "a consuming script with concurrency {concurrency} interleaves entries \
             unpredictably; set backend.stateless = true for concurrent batches"
        );
    }

    let ledger = UsageLedger::default();
    let env = SessionEnv {
        graph: &world.graph,
        encoder: world.encoder.as_ref(),
        wiki: world.wiki.as_deref(),
        web: world.web.as_deref(),
        bank: &world.bank,
        limits: eff.config.limits.to_limits(),
        hybrid: eff.config.hybrid,
        templates: &world.templates,
        ledger: Some(&ledger),
    };

    // Chunked so long batches report progress; input order is preserved.
    let chunk = concurrency.max(100);
    let mut records: Vec<SessionRecord> = Vec::with_capacity(inputs.len());
    for slice in inputs.chunks(chunk) {
        let batch = run_batch(slice, &env, &session_config, backend.as_ref(), concurrency);
        records.extend(batch);
        let failed = records.iter().filter(|r| r.backend_failure()).count();
        log::info!(
            "progress: {}/{} sessions ({} failed)",
            records.len(),
            inputs.len(),
            failed
        );
    }

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| eff.paths.output_dir.join("sessions.jsonl"));
    let mut body = String::new();
    for record in &records {
        body.push_str(&record.to_json_line());
        body.push('\n');
    }
    let header = Header {
        count: Some(records.len()),
        ..Header::new(artifacts::SESSIONS_FORMAT, &eff.checksum)
    };
    artifacts::write_stamped(&out_path, &header, &body)?;
    eff.echo()?;

    if single {
        print_verdict(&world, &records[0]);
    }

    let failures = records.iter().filter(|r| r.backend_failure()).count();
    let totals = ledger.totals();
    println!(
        "{} sessions ({} failed) -> {}",
        records.len(),
        failures,
        out_path.display()
    );
    println!(
        "usage: {} calls, {} input tokens, {} output tokens",
        totals.calls, totals.input_tokens, totals.output_tokens
    );
    println!("config: {}", eff.short_checksum());

    if failures > 0 {
        return Err(CliError::Partial(format!(
            "{failures} of {} sessions aborted on backend errors",
            records.len()
        )));
    }
    Ok(())
}

/// Parse `head|relation|tail` and resolve each name against the catalog.
fn resolve_claim(world: &wiring::World, text: &str) -> Result<Triple, CliError> {
    let parts: Vec<&str> = text.split('|').map(str::trim).collect();
    let [head, relation, tail] = parts.as_slice() else {
        return Err(usage(format!(
            "claim `{text}` must be head|relation|tail (exactly two `|`)"
        )));
    };
    let encoder = world.encoder.as_ref();
    let head_id = resolve(&world.graph, head, TargetKind::Entity, encoder).map_err(usage)?;
    let relation_id = resolve(&world.graph, relation, TargetKind::Relation, encoder).map_err(usage)?;
    let tail_id = resolve(&world.graph, tail, TargetKind::Entity, encoder).map_err(usage)?;
    println!(
        "claim: ({} {}, {} {}, {} {})",
        head_id,
        world.graph.label(&head_id),
        relation_id,
        world.graph.label(&relation_id),
        tail_id,
        world.graph.label(&tail_id)
    );
    Ok(Triple::new(head_id, relation_id, tail_id))
}

fn load_inputs(eff: &Effective, path: &Path) -> Result<Vec<(Triple, Option<Label>)>, CliError> {
    let (header, body) = artifacts::read_stamped(path)?;
    match header {
        Some(h) if h.config_checksum != eff.checksum => log::warn!(
            "test set {} was sampled under config {}, current is {}",
            path.display(),
            &h.config_checksum[..12.min(h.config_checksum.len())],
            eff.short_checksum()
        ),
        Some(_) => {}
        None => log::info!("test set {} carries no config stamp", path.display()),
    }
    let set = load_testset_str(&body, &path.display().to_string()).map_err(usage)?;
    Ok(set
        .into_iter()
        .map(|lt| (lt.triple, Some(lt.label)))
        .collect())
}

/// The single-claim console view: verdict, explanation, and the observations
/// the verdict cites.
fn print_verdict(world: &wiring::World, record: &SessionRecord) {
    let label = match record.verdict.label {
        Some(Label::Correct) => "Correct",
        Some(Label::Incorrect) => "Incorrect",
        None => "invalid (no parseable verdict)",
    };
    println!(
        "target: ({}, {}, {})",
        world.graph.label(&record.target.head),
        world.graph.label(&record.target.relation),
        world.graph.label(&record.target.tail)
    );
    println!("verdict: {label}");
    println!("because: {}", record.verdict.explanation);
    if record.verdict.evidence_chain.is_empty() {
        return;
    }
    println!("evidence:");
    for &i in &record.verdict.evidence_chain {
        let Some(step) = record.steps.get(i) else {
            continue;
        };
        let text = step.observation.as_deref().unwrap_or("");
        println!("  [{i}] {}", excerpt(text));
    }
}

fn excerpt(observation: &str) -> String {
    let first = observation.lines().next().unwrap_or_default();
    let mut out: String = first.chars().take(160).collect();
    if out.len() < first.len() || observation.lines().count() > 1 {
        out.push_str(" ...");
    }
    out
}
