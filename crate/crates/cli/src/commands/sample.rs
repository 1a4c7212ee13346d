//! `sample`: draw a strictly balanced labeled test set from the graph.
//!
//! Positives are the stored non-typing edges; half of the drawn positives
//! are corrupted into type-consistent negatives. The output is stamped with
//! the config checksum and is a pure function of (graph, config), so the
//! same seed always writes the same bytes.

use std::fs;
use std::path::Path;

use kgverify::bench::{build_testset, build_type_index, save_testset};
use kgverify::kg::Triple;
use kgverify::Label;

use crate::artifacts::{self, Header};
use crate::config::Effective;
use crate::error::{usage, CliError};
use crate::wiring;

pub fn run(eff: &Effective, out: Option<&Path>) -> Result<(), CliError> {
    let (graph, _) = wiring::load_graph_cached(eff)?;
    let index = build_type_index(&graph);
    let mut positives: Vec<Triple> = graph
        .triples()
        .filter(|t| !eff.config.dataset.typing_relations.contains(&t.relation))
        .cloned()
        .collect();
    positives.sort();

    let n = eff.config.sample.n;
    let seed = eff.config.sample.seed;
    let set = build_testset(&positives, &graph, &index, n, seed).map_err(usage)?;

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| eff.paths.output_dir.join("testset.jsonl"));

    // The engine owns the record format; write it to a scratch sibling,
    // then prepend the stamp.
    let part = out_path.with_extension("jsonl.part");
    if let Some(parent) = part.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| usage(format!("cannot create directory {}: {e}", parent.display())))?;
        }
    }
    save_testset(&part, &set).map_err(usage)?;
    let body = fs::read_to_string(&part)
        .map_err(|e| usage(format!("cannot read back {}: {e}", part.display())))?;
    fs::remove_file(&part).map_err(|e| usage(format!("cannot remove {}: {e}", part.display())))?;

    let header = Header {
        seed: Some(seed),
        count: Some(set.len()),
        ..Header::new(artifacts::TESTSET_FORMAT, &eff.checksum)
    };
    artifacts::write_stamped(&out_path, &header, &body)?;
    eff.echo()?;

    let positive_count = set.iter().filter(|t| t.label == Label::Correct).count();
    println!(
        "wrote {} positive / {} negative to {} (seed {})",
        positive_count,
        set.len() - positive_count,
        out_path.display(),
        seed
    );
    println!("config: {}", eff.short_checksum());
    Ok(())
}
