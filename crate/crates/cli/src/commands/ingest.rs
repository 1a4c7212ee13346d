//! `ingest`: load the graph, build or refresh the binary cache, and report
//! what the catalog holds.

use crate::commands::group_thousands;
use crate::config::Effective;
use crate::error::CliError;
use crate::wiring;

pub fn run(eff: &Effective) -> Result<(), CliError> {
    let (graph, status) = wiring::load_graph_cached(eff)?;
    let echoed = eff.echo()?;
    println!(
        "{} entities / {} relations / {} triples",
        group_thousands(graph.entity_count()),
        group_thousands(graph.relation_count()),
        group_thousands(graph.triple_count())
    );
    println!("cache: {}", status.describe());
    println!(
        "config: {} (echoed to {})",
        eff.short_checksum(),
        echoed.display()
    );
    Ok(())
}
