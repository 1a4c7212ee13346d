//! `report`: aggregate session records into the metric, tool-utilization,
//! and cost tables. Inputs must all carry the same config stamp unless the
//! caller forces the mix.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use kgverify::agent::SessionRecord;
use kgverify::bench::{aggregate_stats, load_testset_str, metrics_from_records, render_metrics, render_stats_report};
use kgverify::kg::Triple;
use kgverify::Label;

use crate::artifacts;
use crate::config::Effective;
use crate::error::{usage, CliError};

pub fn run(
    eff: &Effective,
    sessions: &[std::path::PathBuf],
    testset: Option<&Path>,
    out: Option<&Path>,
    force: bool,
) -> Result<(), CliError> {
    let mut stamps: BTreeMap<String, String> = BTreeMap::new();
    let mut records: Vec<SessionRecord> = Vec::new();

    for path in sessions {
        let (header, body) = artifacts::read_stamped(path)?;
        if let Some(h) = header {
            stamps.insert(path.display().to_string(), h.config_checksum);
        }
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = SessionRecord::from_json_line(line)
                .map_err(|e| usage(format!("{}:{}: {e}", path.display(), i + 2)))?;
            records.push(record);
        }
    }

    let truths = match testset {
        Some(path) => {
            let (header, body) = artifacts::read_stamped(path)?;
            if let Some(h) = header {
                stamps.insert(path.display().to_string(), h.config_checksum);
            }
            Some(truth_map(&body, path)?)
        }
        None => None,
    };

    let distinct: BTreeSet<&String> = stamps.values().collect();
    if distinct.len() > 1 {
        let listing: Vec<String> = stamps
            .iter()
            .map(|(path, checksum)| format!("  {} -> {}", path, &checksum[..12.min(checksum.len())]))
            .collect();
        if force {
            log::warn!("mixing inputs from different configs:\n{}", listing.join("\n"));
        } else {
            return Err(usage(format!(
                "inputs carry different config checksums (pass --force to mix):\n{}",
                listing.join("\n")
            )));
        }
    }

    if let Some(truths) = &truths {
        align(&mut records, truths)?;
    }

    if records.is_empty() {
        println!("no session records; nothing to report");
        println!("config: {}", eff.short_checksum());
        return Ok(());
    }

    let labeled = records.iter().filter(|r| r.truth.is_some()).count();
    let mut text = String::new();
    if labeled == 0 {
        text.push_str("(no truth labels; pass --testset to score the records)\n");
    } else {
        if labeled < records.len() {
            text.push_str(&format!(
                "({} of {} records carry truth labels)\n",
                labeled,
                records.len()
            ));
        }
        text.push_str(&render_metrics(&metrics_from_records(&records)));
        text.push('\n');
    }
    text.push('\n');
    text.push_str(&render_stats_report(&aggregate_stats(
        &records,
        &eff.config.pricing,
    )));
    text.push('\n');

    print!("{text}");
    println!("config: {}", eff.short_checksum());

    if let Some(path) = out {
        let stamped = format!(
            "# kgverify/report v{} config={}\n{text}",
            artifacts::VERSION,
            eff.checksum
        );
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| {
                    usage(format!("cannot create directory {}: {e}", parent.display()))
                })?;
            }
        }
        fs::write(path, stamped)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        eff.echo()?;
    }
    Ok(())
}

fn truth_map(body: &str, path: &Path) -> Result<BTreeMap<Triple, Label>, CliError> {
    let set = load_testset_str(body, &path.display().to_string()).map_err(usage)?;
    let mut map = BTreeMap::new();
    for entry in set {
        if let Some(previous) = map.insert(entry.triple.clone(), entry.label) {
            if previous != entry.label {
                return Err(usage(format!(
                    "test set assigns both labels to ({}, {}, {})",
                    entry.triple.head, entry.triple.relation, entry.triple.tail
                )));
            }
        }
    }
    Ok(map)
}

/// Check every session against the test set and fill in missing truth
/// labels. A session whose target is absent, or whose recorded truth
/// disagrees, means the files do not belong together.
fn align(records: &mut [SessionRecord], truths: &BTreeMap<Triple, Label>) -> Result<(), CliError> {
    for record in records.iter_mut() {
        let Some(&expected) = truths.get(&record.target) else {
            return Err(usage(format!(
                "session target ({}, {}, {}) is absent from the test set",
                record.target.head, record.target.relation, record.target.tail
            )));
        };
        match record.truth {
            None => record.truth = Some(expected),
            Some(current) if current != expected => {
                return Err(usage(format!(
                    "session target ({}, {}, {}) is labeled {:?} in the test set \
                     but {:?} in the records",
                    record.target.head,
                    record.target.relation,
                    record.target.tail,
                    expected,
                    current
                )));
            }
            Some(_) => {}
        }
    }
    Ok(())
}
