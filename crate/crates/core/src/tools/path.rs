//! Bounded connecting-path enumeration between two entities.
//!
//! Finds every simple path of 1 to `max_hops` hops (hops may traverse edges
//! in either orientation) by meeting in the middle: for a target length L,
//! walks of length ⌈L/2⌉ grow from one endpoint and walks of length ⌊L/2⌋
//! from the other, joined on a shared meeting node. A simple path of length
//! L splits at node ⌈L/2⌉ in exactly one way, so no path is produced twice
//! and, with the degree cap disabled, the output equals a brute-force
//! enumeration of all simple paths.
//!
//! Hub pruning: a node whose degree exceeds the cap is still reachable (it
//! may end a walk or serve as the meeting node) but is never expanded
//! *through*. Query endpoints are always expandable.

use serde::{Deserialize, Serialize};

use super::{resolve_name, EvidenceBody, EvidenceItem, ToolEnv, ToolResult};
use crate::kg::{ExclusionSet, KnowledgeGraph, TargetKind, Triple};

/// Orientation of the underlying edge relative to travel direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HopDirection {
    /// The stored triple is (from, relation, to).
    Forward,
    /// The stored triple is (to, relation, from); the hop walks against it.
    Backward,
}

/// One step of a path, from `from` to `to` via `relation`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub from: String,
    pub relation: String,
    pub direction: HopDirection,
    pub to: String,
}

impl Hop {
    /// The graph fact this hop traverses, in storage orientation.
    pub fn underlying(&self) -> Triple {
        match self.direction {
            HopDirection::Forward => Triple::new(&self.from, &self.relation, &self.to),
            HopDirection::Backward => Triple::new(&self.to, &self.relation, &self.from),
        }
    }
}

/// A chain of 1 to 3 hops whose ends are the queried entities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Path {
    pub hops: Vec<Hop>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn underlying_triples(&self) -> Vec<Triple> {
        self.hops.iter().map(Hop::underlying).collect()
    }

    /// Arrow-style rendering using display labels. Single hops spell the
    /// direction out wide, multi-hop chains use the compact form:
    ///
    /// ```text
    /// (Elon Musk) --> [employer] --> (Tesla, Inc.)
    /// (Elon Musk) <-- [owned by] <-- (Tesla, Inc.)
    /// (Elon Musk) --[unmarried partner]--> (Shivon Zilis) --[employer]--> (Tesla, Inc.)
    /// ```
    pub fn render(&self, g: &KnowledgeGraph) -> String {
        if self.hops.len() == 1 {
            let hop = &self.hops[0];
            let (from, rel, to) = (
                g.label(&hop.from),
                g.label(&hop.relation),
                g.label(&hop.to),
            );
            return match hop.direction {
                HopDirection::Forward => format!("({from}) --> [{rel}] --> ({to})"),
                HopDirection::Backward => format!("({from}) <-- [{rel}] <-- ({to})"),
            };
        }
        let mut out = format!("({})", g.label(&self.hops[0].from));
        for hop in &self.hops {
            let rel = g.label(&hop.relation);
            let to = g.label(&hop.to);
            match hop.direction {
                HopDirection::Forward => out.push_str(&format!(" --[{rel}]--> ({to})")),
                HopDirection::Backward => out.push_str(&format!(" <--[{rel}]-- ({to})")),
            }
        }
        out
    }
}

/// A partial walk under construction: nodes visited so far plus the hops in
/// final-path order.
#[derive(Clone)]
struct Walk {
    nodes: Vec<String>,
    hops: Vec<Hop>,
}

/// Whether the search may expand *through* `node`.
fn expandable(g: &KnowledgeGraph, node: &str, endpoint: &str, cap: Option<usize>) -> bool {
    if node == endpoint {
        return true;
    }
    match cap {
        None => true,
        Some(cap) => g.degree(node) <= cap,
    }
}

/// All simple walks of exactly `steps` hops leaving `start`, moving with or
/// against edge orientation. Hops are oriented start-to-end.
fn forward_walks(
    g: &KnowledgeGraph,
    start: &str,
    steps: usize,
    exclude: &ExclusionSet,
    cap: Option<usize>,
) -> Vec<Walk> {
    let mut done = Vec::new();
    let mut frontier = vec![Walk {
        nodes: vec![start.to_string()],
        hops: Vec::new(),
    }];
    for _ in 0..steps {
        let mut next = Vec::new();
        for walk in &frontier {
            let here = walk.nodes.last().unwrap();
            if !expandable(g, here, start, cap) {
                continue;
            }
            for (relation, tail) in g.out_edges(here) {
                let triple = Triple::new(here, relation, tail);
                if exclude.contains(&triple) || walk.nodes.contains(tail) {
                    continue;
                }
                let mut grown = walk.clone();
                grown.hops.push(Hop {
                    from: here.clone(),
                    relation: relation.clone(),
                    direction: HopDirection::Forward,
                    to: tail.clone(),
                });
                grown.nodes.push(tail.clone());
                next.push(grown);
            }
            for (relation, head) in g.in_edges(here) {
                let triple = Triple::new(head, relation, here);
                if exclude.contains(&triple) || walk.nodes.contains(head) {
                    continue;
                }
                let mut grown = walk.clone();
                grown.hops.push(Hop {
                    from: here.clone(),
                    relation: relation.clone(),
                    direction: HopDirection::Backward,
                    to: head.clone(),
                });
                grown.nodes.push(head.clone());
                next.push(grown);
            }
        }
        frontier = next;
    }
    done.extend(frontier);
    done
}

/// All simple walks of exactly `steps` hops *arriving at* `end`. The walk
/// grows leftwards from `end`; hops are already oriented in final-path
/// order (toward `end`), and `nodes` runs from `end` backwards.
fn backward_walks(
    g: &KnowledgeGraph,
    end: &str,
    steps: usize,
    exclude: &ExclusionSet,
    cap: Option<usize>,
) -> Vec<Walk> {
    let mut frontier = vec![Walk {
        nodes: vec![end.to_string()],
        hops: Vec::new(),
    }];
    for _ in 0..steps {
        let mut next = Vec::new();
        for walk in &frontier {
            let here = walk.nodes.last().unwrap();
            if !expandable(g, here, end, cap) {
                continue;
            }
            // An in-edge (prev, relation, here) is walked with the arrow.
            for (relation, prev) in g.in_edges(here) {
                let triple = Triple::new(prev, relation, here);
                if exclude.contains(&triple) || walk.nodes.contains(prev) {
                    continue;
                }
                let mut grown = walk.clone();
                grown.hops.insert(
                    0,
                    Hop {
                        from: prev.clone(),
                        relation: relation.clone(),
                        direction: HopDirection::Forward,
                        to: here.clone(),
                    },
                );
                grown.nodes.push(prev.clone());
                next.push(grown);
            }
            // An out-edge (here, relation, prev) is walked against the arrow.
            for (relation, prev) in g.out_edges(here) {
                let triple = Triple::new(here, relation, prev);
                if exclude.contains(&triple) || walk.nodes.contains(prev) {
                    continue;
                }
                let mut grown = walk.clone();
                grown.hops.insert(
                    0,
                    Hop {
                        from: prev.clone(),
                        relation: relation.clone(),
                        direction: HopDirection::Backward,
                        to: here.clone(),
                    },
                );
                grown.nodes.push(prev.clone());
                next.push(grown);
            }
        }
        frontier = next;
    }
    frontier
}

/// Enumerate simple paths from `a` to `b` of 1 to `max_hops` hops, shortest
/// first, lexicographic within a length, capped at `max_paths`. Excluded
/// triples are invisible to the traversal.
pub fn find_paths(
    g: &KnowledgeGraph,
    a: &str,
    b: &str,
    exclude: &ExclusionSet,
    max_hops: usize,
    max_paths: usize,
    degree_cap: Option<usize>,
) -> Vec<Path> {
    let max_hops = max_hops.clamp(1, 3);
    if a == b {
        return Vec::new();
    }
    let mut found = Vec::new();
    for length in 1..=max_hops {
        let fwd_steps = length.div_ceil(2);
        let bwd_steps = length / 2;
        let fwd = forward_walks(g, a, fwd_steps, exclude, degree_cap);
        let bwd = backward_walks(g, b, bwd_steps, exclude, degree_cap);
        for fw in &fwd {
            let meet = fw.nodes.last().unwrap();
            for bw in &bwd {
                if bw.nodes.last().unwrap() != meet {
                    continue;
                }
                // Simplicity across the join: only the meeting node repeats.
                let disjoint = fw.nodes[..fw.nodes.len() - 1]
                    .iter()
                    .all(|n| !bw.nodes.contains(n));
                if !disjoint {
                    continue;
                }
                let mut hops = fw.hops.clone();
                hops.extend(bw.hops.iter().cloned());
                found.push(Path { hops });
            }
        }
    }
    found.sort_by(|p, q| p.len().cmp(&q.len()).then_with(|| p.hops.cmp(&q.hops)));
    found.dedup();
    found.truncate(max_paths);
    found
}

/// The `KG_Path` tool: resolve both endpoints, enumerate connecting paths,
/// render them in arrow style.
pub fn kg_path(entity_a: &str, entity_b: &str, env: &ToolEnv) -> ToolResult {
    let Some(id_a) = resolve_name(env.graph, entity_a, TargetKind::Entity, env.encoder) else {
        return ToolResult::empty(format!(
            "No entity matching '{entity_a}' was found in the knowledge graph."
        ));
    };
    let Some(id_b) = resolve_name(env.graph, entity_b, TargetKind::Entity, env.encoder) else {
        return ToolResult::empty(format!(
            "No entity matching '{entity_b}' was found in the knowledge graph."
        ));
    };
    if id_a == id_b {
        return ToolResult::empty(format!(
            "'{entity_a}' and '{entity_b}' resolve to the same entity ({id_a}); \
             paths require two distinct endpoints."
        ));
    }
    let paths = find_paths(
        env.graph,
        &id_a,
        &id_b,
        &env.exclude,
        env.limits.max_hops,
        env.limits.max_paths,
        env.limits.degree_cap,
    );
    if paths.is_empty() {
        return ToolResult::empty(format!(
            "No direct,2-hop or 3-hop paths found between {id_a} and {id_b}."
        ));
    }
    let rendering = paths
        .iter()
        .map(|p| p.render(env.graph))
        .collect::<Vec<_>>()
        .join("\n");
    let payload = paths
        .into_iter()
        .map(|p| EvidenceItem {
            body: EvidenceBody::Path(p),
            source: "kg".to_string(),
        })
        .collect();
    ToolResult::ok(rendering, payload)
}
