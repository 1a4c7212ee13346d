//! Knowledge-graph storage: loading, indexing, and lookup.
//!
//! The graph is loaded once from tab-separated files and is immutable
//! afterwards, so it can be shared freely across concurrent verification
//! sessions. Queries that could reveal the triple under test accept an
//! [`ExclusionSet`]; excluded edges are suppressed from every result.

mod cache;

pub use cache::{read_cache, write_cache, CacheError};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{cosine, Encoder, RetrievalError};

/// A directed fact `(head, relation, tail)`. Identifiers are opaque strings
/// (Q-ids, MIDs, or anything line-oriented data provides).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Catalog entry for an entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub label: String,
    pub description: String,
    pub aliases: Vec<String>,
    /// Sorted objects of the configured typing relations (e.g. instance-of).
    pub type_signature: Vec<String>,
}

/// Catalog entry for a relation. Empty domain/range means unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub id: String,
    pub label: String,
    pub description: String,
    pub aliases: Vec<String>,
    pub domain_types: BTreeSet<String>,
    pub range_types: BTreeSet<String>,
}

/// Edge direction relative to the queried entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Out,
    In,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Out => write!(f, "out"),
            Direction::In => write!(f, "in"),
        }
    }
}

/// One 1-hop edge as seen from a query entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborEdge {
    pub direction: Direction,
    pub relation: String,
    pub other: String,
}

impl NeighborEdge {
    /// The underlying fact, oriented as stored in the graph.
    pub fn as_triple(&self, entity: &str) -> Triple {
        match self.direction {
            Direction::Out => Triple::new(entity, &self.relation, &self.other),
            Direction::In => Triple::new(&self.other, &self.relation, entity),
        }
    }
}

/// Result of a neighbor query. `entity_found` is false when the entity is
/// unknown to both the catalog and the edge indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborResult {
    pub edges: Vec<NeighborEdge>,
    pub entity_found: bool,
}

/// Triples suppressed from every query result while active. Passed per-call;
/// membership tests via [`contains`] ignore it on purpose.
#[derive(Debug, Clone, Default)]
pub struct ExclusionSet {
    triples: HashSet<Triple>,
}

impl ExclusionSet {
    pub fn empty() -> Self {
        ExclusionSet::default()
    }

    pub fn single(t: Triple) -> Self {
        let mut triples = HashSet::new();
        triples.insert(t);
        ExclusionSet { triples }
    }

    pub fn from_triples(ts: impl IntoIterator<Item = Triple>) -> Self {
        ExclusionSet {
            triples: ts.into_iter().collect(),
        }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Immutable, fully indexed fact set plus entity/relation catalogs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    triples: HashSet<Triple>,
    /// entity -> (relation, tail), sorted by (relation, tail).
    out_index: HashMap<String, Vec<(String, String)>>,
    /// entity -> (relation, head), sorted by (relation, head).
    in_index: HashMap<String, Vec<(String, String)>>,
    entities: HashMap<String, EntityRecord>,
    relations: HashMap<String, RelationRecord>,
    degree: HashMap<String, usize>,
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}:{line}: expected {expected} tab-separated fields, found {found}")]
    MalformedLine {
        path: String,
        line: usize,
        expected: String,
        found: usize,
    },
    #[error("{path}:{line}: duplicate metadata id `{id}`")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("cannot resolve `{name}`: the {kind} catalog is empty")]
    EmptyCatalog { name: String, kind: TargetKind },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Whether a name should resolve against entities or relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    Entity,
    Relation,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Entity => write!(f, "entity"),
            TargetKind::Relation => write!(f, "relation"),
        }
    }
}

impl KnowledgeGraph {
    /// Build a graph from in-memory parts. Indices are derived here, so the
    /// consistency invariants hold by construction.
    pub fn from_parts(
        triples: impl IntoIterator<Item = Triple>,
        entities: impl IntoIterator<Item = EntityRecord>,
        relations: impl IntoIterator<Item = RelationRecord>,
        typing_relations: &BTreeSet<String>,
    ) -> Self {
        let triples: HashSet<Triple> = triples.into_iter().collect();
        let mut entities: HashMap<String, EntityRecord> = entities
            .into_iter()
            .map(|record| (record.id.clone(), record))
            .collect();
        let relations: HashMap<String, RelationRecord> = relations
            .into_iter()
            .map(|record| (record.id.clone(), record))
            .collect();

        let mut out_index: HashMap<String, Vec<(String, String)>> = HashMap::new();
        let mut in_index: HashMap<String, Vec<(String, String)>> = HashMap::new();
        for t in &triples {
            out_index
                .entry(t.head.clone())
                .or_default()
                .push((t.relation.clone(), t.tail.clone()));
            in_index
                .entry(t.tail.clone())
                .or_default()
                .push((t.relation.clone(), t.head.clone()));
        }
        for edges in out_index.values_mut() {
            edges.sort();
        }
        for edges in in_index.values_mut() {
            edges.sort();
        }

        let mut degree: HashMap<String, usize> = HashMap::new();
        for t in &triples {
            *degree.entry(t.head.clone()).or_insert(0) += 1;
            *degree.entry(t.tail.clone()).or_insert(0) += 1;
        }

        // Stub records keep verification usable on incomplete dumps.
        for id in degree.keys() {
            entities
                .entry(id.clone())
                .or_insert_with(|| stub_entity(id));
        }

        let mut graph = KnowledgeGraph {
            triples,
            out_index,
            in_index,
            entities,
            relations,
            degree,
        };
        graph.compute_type_signatures(typing_relations);
        graph
    }

    fn compute_type_signatures(&mut self, typing_relations: &BTreeSet<String>) {
        let mut signatures: HashMap<String, BTreeSet<String>> = HashMap::new();
        for t in &self.triples {
            if typing_relations.contains(&t.relation) {
                signatures
                    .entry(t.head.clone())
                    .or_default()
                    .insert(t.tail.clone());
            }
        }
        for record in self.entities.values_mut() {
            record.type_signature = signatures
                .remove(&record.id)
                .map(|set| set.into_iter().collect())
                .unwrap_or_default();
        }
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    pub fn relation(&self, id: &str) -> Option<&RelationRecord> {
        self.relations.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationRecord> {
        self.relations.values()
    }

    pub fn degree(&self, entity: &str) -> usize {
        self.degree.get(entity).copied().unwrap_or(0)
    }

    /// Display label for an entity or relation id, falling back to the id.
    pub fn label<'a>(&'a self, id: &'a str) -> &'a str {
        if let Some(e) = self.entities.get(id) {
            &e.label
        } else if let Some(r) = self.relations.get(id) {
            &r.label
        } else {
            id
        }
    }

    pub(crate) fn out_edges(&self, entity: &str) -> &[(String, String)] {
        self.out_index.get(entity).map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn in_edges(&self, entity: &str) -> &[(String, String)] {
        self.in_index.get(entity).map(Vec::as_slice).unwrap_or(&[])
    }

}

fn stub_entity(id: &str) -> EntityRecord {
    EntityRecord {
        id: id.to_string(),
        label: id.to_string(),
        description: String::new(),
        aliases: Vec::new(),
        type_signature: Vec::new(),
    }
}

/// Load and index a graph from a TSV triple file plus entity/relation
/// metadata files.
///
/// Triple lines are `head<TAB>relation<TAB>tail`. Metadata lines are
/// `id<TAB>label<TAB>description<TAB>alias1|alias2|...`; relation metadata
/// accepts two further columns for `|`-separated domain and range types.
/// Ids that appear in triples but not in the metadata get stub records
/// (label = id) rather than failing the load.
pub fn load_graph(
    triples_path: &Path,
    entity_meta_path: &Path,
    relation_meta_path: &Path,
    typing_relations: &BTreeSet<String>,
) -> Result<KnowledgeGraph, KgError> {
    let triples = parse_triples(triples_path)?;
    let entities = parse_entity_meta(entity_meta_path)?;
    let relations = parse_relation_meta(relation_meta_path)?;
    Ok(KnowledgeGraph::from_parts(
        triples,
        entities,
        relations,
        typing_relations,
    ))
}

fn read_lines(path: &Path) -> Result<Vec<String>, KgError> {
    let text = fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn parse_triples(path: &Path) -> Result<Vec<Triple>, KgError> {
    let mut triples = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
                expected: "3".to_string(),
                found: fields.len(),
            });
        }
        triples.push(Triple::new(fields[0], fields[1], fields[2]));
    }
    Ok(triples)
}

fn split_aliases(field: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    field
        .split('|')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .filter(|a| seen.insert(a.to_string()))
        .map(str::to_string)
        .collect()
}

fn parse_entity_meta(path: &Path) -> Result<Vec<EntityRecord>, KgError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(KgError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
                expected: "2 to 4".to_string(),
                found: fields.len(),
            });
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(KgError::DuplicateId {
                path: path.display().to_string(),
                line: i + 1,
                id,
            });
        }
        records.push(EntityRecord {
            id,
            label: fields[1].to_string(),
            description: fields.get(2).unwrap_or(&"").to_string(),
            aliases: split_aliases(fields.get(3).unwrap_or(&"")),
            type_signature: Vec::new(),
        });
    }
    Ok(records)
}

fn parse_relation_meta(path: &Path) -> Result<Vec<RelationRecord>, KgError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 6 {
            return Err(KgError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
                expected: "2 to 6".to_string(),
                found: fields.len(),
            });
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(KgError::DuplicateId {
                path: path.display().to_string(),
                line: i + 1,
                id,
            });
        }
        records.push(RelationRecord {
            id,
            label: fields[1].to_string(),
            description: fields.get(2).unwrap_or(&"").to_string(),
            aliases: split_aliases(fields.get(3).unwrap_or(&"")),
            domain_types: split_aliases(fields.get(4).unwrap_or(&"")).into_iter().collect(),
            range_types: split_aliases(fields.get(5).unwrap_or(&"")).into_iter().collect(),
        });
    }
    Ok(records)
}

/// Exact membership in the fact set. Ground truth: the exclusion mechanism
/// deliberately does not apply here.
pub fn contains(g: &KnowledgeGraph, t: &Triple) -> bool {
    g.triples.contains(t)
}

/// All 1-hop edges of `e` in both directions, minus excluded triples,
/// ordered by (relation, other entity, direction).
pub fn neighbors(g: &KnowledgeGraph, e: &str, exclude: &ExclusionSet) -> NeighborResult {
    let entity_found =
        g.entities.contains_key(e) || g.out_index.contains_key(e) || g.in_index.contains_key(e);
    if !entity_found {
        return NeighborResult {
            edges: Vec::new(),
            entity_found: false,
        };
    }
    let mut edges = Vec::new();
    for (relation, tail) in g.out_edges(e) {
        let t = Triple::new(e, relation, tail);
        if !exclude.contains(&t) {
            edges.push(NeighborEdge {
                direction: Direction::Out,
                relation: relation.clone(),
                other: tail.clone(),
            });
        }
    }
    for (relation, head) in g.in_edges(e) {
        let t = Triple::new(head, relation, e);
        if !exclude.contains(&t) {
            edges.push(NeighborEdge {
                direction: Direction::In,
                relation: relation.clone(),
                other: head.clone(),
            });
        }
    }
    edges.sort_by(|a, b| {
        (&a.relation, &a.other, a.direction).cmp(&(&b.relation, &b.other, b.direction))
    });
    NeighborResult {
        edges,
        entity_found: true,
    }
}

/// Lowercase and collapse whitespace runs, for exact-match comparison.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn catalog_entries<'g>(g: &'g KnowledgeGraph, kind: TargetKind) -> Vec<(&'g str, &'g str, &'g [String])> {
    match kind {
        TargetKind::Entity => g
            .entities
            .values()
            .map(|e| (e.id.as_str(), e.label.as_str(), e.aliases.as_slice()))
            .collect(),
        TargetKind::Relation => g
            .relations
            .values()
            .map(|r| (r.id.as_str(), r.label.as_str(), r.aliases.as_slice()))
            .collect(),
    }
}

/// First resolution stage alone: case-insensitive, whitespace-normalized
/// exact match on labels, then on aliases. Ties break to the smallest id.
pub fn resolve_exact(g: &KnowledgeGraph, name: &str, kind: TargetKind) -> Option<String> {
    let needle = normalize_name(name);
    let mut label_hit: Option<&str> = None;
    let mut alias_hit: Option<&str> = None;
    for (id, label, aliases) in catalog_entries(g, kind) {
        if normalize_name(label) == needle && label_hit.map_or(true, |prev| id < prev) {
            label_hit = Some(id);
        }
        if aliases.iter().any(|a| normalize_name(a) == needle)
            && alias_hit.map_or(true, |prev| id < prev)
        {
            alias_hit = Some(id);
        }
    }
    label_hit.or(alias_hit).map(str::to_string)
}

/// Map a surface name to a catalog identifier.
///
/// Stage 1 is [`resolve_exact`]. Stage 2 falls back to dense matching: the
/// name and every label are encoded and the id with the highest cosine
/// similarity wins. Ties break to the lexicographically smallest id, so
/// resolution is a pure function of (catalog, name, encoder).
pub fn resolve(
    g: &KnowledgeGraph,
    name: &str,
    kind: TargetKind,
    encoder: &dyn Encoder,
) -> Result<String, KgError> {
    let labelled = catalog_entries(g, kind);
    if labelled.is_empty() {
        return Err(KgError::EmptyCatalog {
            name: name.to_string(),
            kind,
        });
    }
    if let Some(id) = resolve_exact(g, name, kind) {
        return Ok(id);
    }

    let query = encoder.encode(name)?;
    let mut best: Option<(f64, &str)> = None;
    for (id, label, _) in &labelled {
        let sim = cosine(&query, &encoder.encode(label)?)?;
        let better = match best {
            None => true,
            Some((best_sim, best_id)) => {
                sim > best_sim || (sim == best_sim && *id < best_id)
            }
        };
        if better {
            best = Some((sim, id));
        }
    }
    Ok(best.expect("catalog is non-empty").1.to_string())
}
