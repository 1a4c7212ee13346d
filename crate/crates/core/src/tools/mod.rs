//! The agent's action space: five evidence tools plus `Finish`.
//!
//! Three tools read the graph itself (definitions, filtered neighborhoods,
//! connecting paths) and two consult external text (an encyclopedia corpus
//! and web search snippets). [`registry`] describes the toolset in the form
//! the model sees; [`dispatch`] routes a parsed [`ToolCall`] to the right
//! implementation and is total: unknown names, bad arity, provider outages,
//! and protocol violations all come back as observations the agent can read
//! and recover from, never as panics or aborted sessions.
//!
//! Every KG-backed result honors the session's [`ExclusionSet`], so the
//! triple under verification can never be read off the graph directly.

mod evidence;
mod path;

pub use evidence::{
    web_evidence, wiki_evidence, Article, FixtureWeb, FixtureWiki, ProviderError, Snippet,
    WebProvider, WikiProvider,
};
pub use path::{find_paths, kg_path, Hop, HopDirection, Path};

use serde::{Deserialize, Serialize};

use crate::kg::{self, ExclusionSet, KnowledgeGraph, TargetKind, Triple};
use crate::retrieval::{cosine, Encoder, HybridConfig};

/// Reserved route for unparseable model turns: dispatching it produces a
/// corrective observation that restates the protocol.
pub const FORMAT_ERROR_TOOL: &str = "__format_error__";

/// Canonical tool identity. Parsing accepts the historical aliases that
/// appear in older trajectories (`KG_Basic_Info_Tool` and friends).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolName {
    KgDefinition,
    KgNeighbor,
    KgPath,
    WikiEvidence,
    WebEvidence,
    Finish,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::KgDefinition,
        ToolName::KgNeighbor,
        ToolName::KgPath,
        ToolName::WikiEvidence,
        ToolName::WebEvidence,
        ToolName::Finish,
    ];

    pub fn canonical(self) -> &'static str {
        match self {
            ToolName::KgDefinition => "KG_Definition",
            ToolName::KgNeighbor => "KG_Neighbor",
            ToolName::KgPath => "KG_Path",
            ToolName::WikiEvidence => "Wiki_Evidence",
            ToolName::WebEvidence => "Web_Evidence",
            ToolName::Finish => "Finish",
        }
    }

    pub fn from_alias(name: &str) -> Option<ToolName> {
        match name.trim().to_lowercase().as_str() {
            "kg_definition" | "kg_definition_tool" | "kg_basic_info" | "kg_basic_info_tool" => {
                Some(ToolName::KgDefinition)
            }
            "kg_neighbor" | "kg_neighbor_tool" | "kg_neighbors" => Some(ToolName::KgNeighbor),
            "kg_path" | "kg_path_tool" => Some(ToolName::KgPath),
            "wiki_evidence" | "wiki_evidence_tool" => Some(ToolName::WikiEvidence),
            "web_evidence" | "web_evidence_tool" => Some(ToolName::WebEvidence),
            "finish" => Some(ToolName::Finish),
            _ => None,
        }
    }

    /// Structural tools read the graph; the rest are external or terminal.
    pub fn is_kg(self) -> bool {
        matches!(
            self,
            ToolName::KgDefinition | ToolName::KgNeighbor | ToolName::KgPath
        )
    }

    pub fn is_external(self) -> bool {
        matches!(self, ToolName::WikiEvidence | ToolName::WebEvidence)
    }
}

/// One entry of the tool registry shown to the model.
#[derive(Debug, Clone)]
pub struct ToolSpec {
    pub name: ToolName,
    /// (parameter name, short description), in calling order.
    pub parameters: Vec<(&'static str, &'static str)>,
    pub usage: &'static str,
    /// A canonical call, shown to the model and kept parseable.
    pub example: &'static str,
}

/// The full toolset in fixed order: the five evidence tools, then Finish.
pub fn registry() -> Vec<ToolSpec> {
    vec![
        ToolSpec {
            name: ToolName::KgDefinition,
            parameters: vec![(
                "entity | relation",
                "name of the entity or the relation to look up (pass exactly one)",
            )],
            usage: "Returns schema metadata (labels, domains, ranges) to establish basic \
                    definitions for nodes/edges.",
            example: "KG_Definition(entity='Elon Musk')",
        },
        ToolSpec {
            name: ToolName::KgNeighbor,
            parameters: vec![
                ("entity", "entity whose neighborhood to inspect"),
                ("relation", "semantic direction used to rank the neighbors"),
            ],
            usage: "Returns top-20 semantically correlated target entities to analyze local \
                    subgraphs and co-occurrences.",
            example: "KG_Neighbor(entity='Dat Nguyen', relation='member of sports team')",
        },
        ToolSpec {
            name: ToolName::KgPath,
            parameters: vec![
                ("entity_a", "first endpoint"),
                ("entity_b", "second endpoint"),
            ],
            usage: "Returns explicit 1 to 3-hop relational paths to verify structural \
                    connectivity and implicit links.",
            example: "KG_Path(entity_a='Elon Musk', entity_b='Tesla')",
        },
        ToolSpec {
            name: ToolName::WikiEvidence,
            parameters: vec![
                ("entity | entity_a", "entity to summarize, or the first of two entities"),
                ("entity_b", "optional second entity for co-occurrence search"),
            ],
            usage: "With one entity, returns Wikipedia summaries/attributes for encyclopedic \
                    background. With two, returns sentences mentioning both entities to \
                    discover explicit textual links.",
            example: "Wiki_Evidence(entity='Elon Musk')",
        },
        ToolSpec {
            name: ToolName::WebEvidence,
            parameters: vec![("question", "natural-language question to search for")],
            usage: "Returns top-5 Google search snippets as a final fallback validation for \
                    long-tail or emerging facts.",
            example: "Web_Evidence(question='Is Elon Musk the CEO of Tesla?')",
        },
        ToolSpec {
            name: ToolName::Finish,
            parameters: vec![("answer", "final verdict in the required format")],
            usage: "Ends the investigation. Emit `Final Answer: [Correct] Because ...` or \
                    `Final Answer: [Incorrect] Because ...` instead of an Action.",
            example: "Final Answer: [Correct] Because the evidence confirms the fact.",
        },
    ]
}

/// Registry with ablated tool groups removed. `Finish` always survives.
pub fn filtered_registry(kg_enabled: bool, external_enabled: bool) -> Vec<ToolSpec> {
    registry()
        .into_iter()
        .filter(|spec| match spec.name {
            ToolName::Finish => true,
            name if name.is_kg() => kg_enabled,
            _ => external_enabled,
        })
        .collect()
}

/// Byte-stable prompt rendering of the registry (golden-file tested).
pub fn render_registry(specs: &[ToolSpec]) -> String {
    let mut out = String::new();
    for spec in specs {
        let params: Vec<String> = spec
            .parameters
            .iter()
            .map(|(name, desc)| format!("{name}: str ({desc})"))
            .collect();
        out.push_str(&format!(
            "- {}({})\n  {}\n  Example: {}\n",
            spec.name.canonical(),
            params.join(", "),
            spec.usage,
            spec.example
        ));
    }
    out
}

/// A parsed action. `tool` keeps the surface spelling so unknown names can
/// flow through dispatch and come back as corrective observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub arguments: Vec<String>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>, arguments: Vec<String>) -> Self {
        ToolCall {
            tool: tool.into(),
            arguments,
        }
    }

    pub fn name(&self) -> Option<ToolName> {
        ToolName::from_alias(&self.tool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolStatus {
    Ok,
    Empty,
    Error,
}

/// Structured evidence carried alongside the rendered observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub body: EvidenceBody,
    /// Source tag: "kg", a corpus title, or a web source name.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EvidenceBody {
    Edge(Triple),
    Path(Path),
    Snippet(String),
    Profile(String),
}

/// Outcome of one tool invocation. The rendering is never empty: even
/// failures explain themselves so the agent can adjust course.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: ToolStatus,
    pub rendering: String,
    pub payload: Vec<EvidenceItem>,
}

impl ToolResult {
    pub fn ok(rendering: impl Into<String>, payload: Vec<EvidenceItem>) -> Self {
        ToolResult {
            status: ToolStatus::Ok,
            rendering: rendering.into(),
            payload,
        }
    }

    pub fn empty(rendering: impl Into<String>) -> Self {
        ToolResult {
            status: ToolStatus::Empty,
            rendering: rendering.into(),
            payload: Vec::new(),
        }
    }

    pub fn error(rendering: impl Into<String>) -> Self {
        ToolResult {
            status: ToolStatus::Error,
            rendering: rendering.into(),
            payload: Vec::new(),
        }
    }
}

/// Per-call bounds, all configurable. Absent fields deserialize to the
/// defaults, so partial overrides in config files work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolLimits {
    pub neighbor_limit: usize,
    pub max_hops: usize,
    pub max_paths: usize,
    /// Path search expands through a node only while its degree stays at or
    /// under the cap; `None` disables the pruning.
    pub degree_cap: Option<usize>,
    /// Word-distance threshold for wiki co-occurrence mode.
    pub tau_words: usize,
    pub snippet_limit: usize,
}

impl Default for ToolLimits {
    fn default() -> Self {
        ToolLimits {
            neighbor_limit: 20,
            max_hops: 3,
            max_paths: 20,
            degree_cap: Some(1000),
            tau_words: 50,
            snippet_limit: 5,
        }
    }
}

/// Everything dispatch needs: the immutable graph, providers, the session's
/// exclusion set, and which tool groups the configuration enables.
pub struct ToolEnv<'a> {
    pub graph: &'a KnowledgeGraph,
    pub encoder: &'a dyn Encoder,
    pub wiki: Option<&'a dyn WikiProvider>,
    pub web: Option<&'a dyn WebProvider>,
    pub exclude: ExclusionSet,
    pub limits: ToolLimits,
    pub hybrid: HybridConfig,
    pub kg_enabled: bool,
    pub external_enabled: bool,
}

impl<'a> ToolEnv<'a> {
    pub fn enabled_tools(&self) -> Vec<ToolSpec> {
        filtered_registry(self.kg_enabled, self.external_enabled)
    }
}

/// Resolve a surface name to a catalog id, or `None` when nothing plausibly
/// matches.
///
/// Raw ids pass straight through, then the exact label/alias stage, then the
/// dense fallback. The fallback is gated: the winning record must share at
/// least one token with the query, otherwise arbitrary garbage would always
/// "resolve" to its nearest neighbor in embedding space.
pub(crate) fn resolve_name(
    g: &KnowledgeGraph,
    name: &str,
    kind: TargetKind,
    enc: &dyn Encoder,
) -> Option<String> {
    let is_id = match kind {
        TargetKind::Entity => g.entity(name).is_some(),
        TargetKind::Relation => g.relation(name).is_some(),
    };
    if is_id {
        return Some(name.to_string());
    }
    if let Some(id) = kg::resolve_exact(g, name, kind) {
        return Some(id);
    }
    let id = kg::resolve(g, name, kind, enc).ok()?;
    let query_tokens = crate::retrieval::tokenize(name);
    let mut candidate_tokens: Vec<String> = crate::retrieval::tokenize(&id);
    match kind {
        TargetKind::Entity => {
            let e = g.entity(&id)?;
            candidate_tokens.extend(crate::retrieval::tokenize(&e.label));
            for a in &e.aliases {
                candidate_tokens.extend(crate::retrieval::tokenize(a));
            }
        }
        TargetKind::Relation => {
            let r = g.relation(&id)?;
            candidate_tokens.extend(crate::retrieval::tokenize(&r.label));
            for a in &r.aliases {
                candidate_tokens.extend(crate::retrieval::tokenize(a));
            }
        }
    }
    if query_tokens.iter().any(|t| candidate_tokens.contains(t)) {
        Some(id)
    } else {
        None
    }
}

/// Schema lookup for an entity or a relation.
pub fn kg_definition(
    target: &str,
    kind: TargetKind,
    g: &KnowledgeGraph,
    enc: &dyn Encoder,
) -> ToolResult {
    let Some(id) = resolve_name(g, target, kind, enc) else {
        return ToolResult::empty(format!(
            "No {kind} matching '{target}' was found in the knowledge graph."
        ));
    };
    match kind {
        TargetKind::Entity => {
            let record = g.entity(&id).expect("resolved ids exist");
            let mut fields = vec![format!("Label: {}", record.label)];
            if !record.description.is_empty() {
                fields.push(format!("Description: {}", record.description));
            }
            if !record.type_signature.is_empty() {
                let types: Vec<&str> =
                    record.type_signature.iter().map(|t| g.label(t)).collect();
                fields.push(format!("Type: {}", types.join(", ")));
            }
            if !record.aliases.is_empty() {
                fields.push(format!("Aliases: {}", record.aliases.join(", ")));
            }
            ToolResult::ok(
                format!("Entity Profile: {id}\n{}.", fields.join(";\n")),
                vec![EvidenceItem {
                    body: EvidenceBody::Profile(id),
                    source: "kg".to_string(),
                }],
            )
        }
        TargetKind::Relation => {
            let record = g.relation(&id).expect("resolved ids exist");
            let mut fields = vec![format!("Label: {}", record.label)];
            if !record.description.is_empty() {
                fields.push(format!("Description: {}", record.description));
            }
            if !record.aliases.is_empty() {
                fields.push(format!("Aliases: {}", record.aliases.join(", ")));
            }
            fields.push(format!(
                "Subject Constraint (Domain): {}",
                render_constraint(g, record.domain_types.iter())
            ));
            fields.push(format!(
                "Object Constraint (Range): {}",
                render_constraint(g, record.range_types.iter())
            ));
            ToolResult::ok(
                format!("Relation Profile: {id}\n{}.", fields.join(";\n")),
                vec![EvidenceItem {
                    body: EvidenceBody::Profile(id),
                    source: "kg".to_string(),
                }],
            )
        }
    }
}

fn render_constraint<'a>(
    g: &KnowledgeGraph,
    types: impl Iterator<Item = &'a String>,
) -> String {
    let labels: Vec<&str> = types.map(|t| g.label(t)).collect();
    if labels.is_empty() {
        "None defined (Open Domain / Any)".to_string()
    } else {
        labels.join("; ")
    }
}

/// 1-hop neighborhood of `entity`, both directions, ranked by the cosine
/// similarity between each edge's relation label and the query `relation`.
/// Ties break by (relation id, neighbor id, direction) so rankings are
/// reproducible. The exclusion set is applied before anything is scored.
pub fn kg_neighbor(
    entity: &str,
    relation: &str,
    g: &KnowledgeGraph,
    enc: &dyn Encoder,
    exclude: &ExclusionSet,
    limit: usize,
) -> ToolResult {
    let Some(id) = resolve_name(g, entity, TargetKind::Entity, enc) else {
        return ToolResult::empty(format!(
            "No entity matching '{entity}' was found in the knowledge graph."
        ));
    };
    let result = kg::neighbors(g, &id, exclude);
    if result.edges.is_empty() {
        return ToolResult::empty(format!(
            "No neighboring facts found for {}.",
            g.label(&id)
        ));
    }
    let query_vec = match enc.encode(relation) {
        Ok(v) => v,
        Err(e) => return ToolResult::error(format!("neighbor ranking failed: {e}")),
    };
    let mut scored = Vec::with_capacity(result.edges.len());
    for edge in result.edges {
        let sim = match enc
            .encode(g.label(&edge.relation))
            .and_then(|v| cosine(&query_vec, &v))
        {
            Ok(s) => s,
            Err(e) => return ToolResult::error(format!("neighbor ranking failed: {e}")),
        };
        scored.push((sim, edge));
    }
    scored.sort_by(|(sa, ea), (sb, eb)| {
        sb.partial_cmp(sa)
            .expect("cosine is finite")
            .then_with(|| (&ea.relation, &ea.other, ea.direction).cmp(&(&eb.relation, &eb.other, eb.direction)))
    });
    scored.truncate(limit);

    let mut lines = vec![format!(
        "Neighbors of {} matching '{relation}':",
        g.label(&id)
    )];
    let mut payload = Vec::new();
    for (_, edge) in &scored {
        let arrow = match edge.direction {
            kg::Direction::Out => "->",
            kg::Direction::In => "<-",
        };
        lines.push(format!(
            "[{}] {} {}",
            g.label(&edge.relation),
            arrow,
            g.label(&edge.other)
        ));
        payload.push(EvidenceItem {
            body: EvidenceBody::Edge(edge.as_triple(&id)),
            source: "kg".to_string(),
        });
    }
    ToolResult::ok(lines.join("\n"), payload)
}

fn unknown_tool(name: &str, env: &ToolEnv) -> ToolResult {
    let valid: Vec<&str> = env
        .enabled_tools()
        .iter()
        .map(|s| s.name.canonical())
        .collect();
    ToolResult::error(format!(
        "Unknown tool '{name}'. Valid tools: {}.",
        valid.join(", ")
    ))
}

fn arity_error(name: ToolName, expected: &str, found: usize) -> ToolResult {
    ToolResult::error(format!(
        "{} expects {expected} argument(s), but {found} were given. Example: {}.",
        name.canonical(),
        registry()
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.example)
            .unwrap_or_default()
    ))
}

fn format_error_observation(env: &ToolEnv) -> ToolResult {
    let valid: Vec<&str> = env
        .enabled_tools()
        .iter()
        .map(|s| s.name.canonical())
        .collect();
    ToolResult::error(format!(
        "Your last response did not follow the protocol. Reply with exactly one \
         `Thought: ...` line followed by one `Action: Tool(arg1, arg2)` line, or end with \
         `Final Answer: [Correct/Incorrect] Because ...`. Valid tools: {}.",
        valid.join(", ")
    ))
}

/// Infer whether a bare `KG_Definition` argument names an entity or a
/// relation: known ids win, then exact label/alias matches, then entity.
fn infer_definition_kind(g: &KnowledgeGraph, target: &str) -> TargetKind {
    if g.entity(target).is_some() {
        return TargetKind::Entity;
    }
    if g.relation(target).is_some() {
        return TargetKind::Relation;
    }
    if kg::resolve_exact(g, target, TargetKind::Entity).is_some() {
        return TargetKind::Entity;
    }
    if kg::resolve_exact(g, target, TargetKind::Relation).is_some() {
        return TargetKind::Relation;
    }
    TargetKind::Entity
}

/// Route one call to its tool. Total: every input, including nonsense,
/// produces a readable observation.
pub fn dispatch(call: &ToolCall, env: &ToolEnv) -> ToolResult {
    if call.tool == FORMAT_ERROR_TOOL {
        return format_error_observation(env);
    }
    let Some(name) = call.name() else {
        return unknown_tool(&call.tool, env);
    };
    if (name.is_kg() && !env.kg_enabled) || (name.is_external() && !env.external_enabled) {
        return unknown_tool(name.canonical(), env);
    }
    let args = &call.arguments;
    match name {
        ToolName::Finish => ToolResult::error(
            "Finish is not dispatched as a tool. End your turn with \
             `Final Answer: [Correct/Incorrect] Because ...` instead."
                .to_string(),
        ),
        ToolName::KgDefinition => match args.len() {
            1 => {
                let kind = infer_definition_kind(env.graph, &args[0]);
                kg_definition(&args[0], kind, env.graph, env.encoder)
            }
            2 => match args[1].to_lowercase().as_str() {
                "entity" => kg_definition(&args[0], TargetKind::Entity, env.graph, env.encoder),
                "relation" => {
                    kg_definition(&args[0], TargetKind::Relation, env.graph, env.encoder)
                }
                other => ToolResult::error(format!(
                    "KG_Definition kind must be 'entity' or 'relation', got '{other}'."
                )),
            },
            n => arity_error(name, "1 or 2", n),
        },
        ToolName::KgNeighbor => match args.len() {
            2 => kg_neighbor(
                &args[0],
                &args[1],
                env.graph,
                env.encoder,
                &env.exclude,
                env.limits.neighbor_limit,
            ),
            n => arity_error(name, "2", n),
        },
        ToolName::KgPath => match args.len() {
            2 => kg_path(&args[0], &args[1], env),
            n => arity_error(name, "2", n),
        },
        ToolName::WikiEvidence => match args.len() {
            1 | 2 => match env.wiki {
                Some(provider) => wiki_evidence(args, provider, env),
                None => ToolResult::error(
                    "Wiki_Evidence is not configured with a corpus in this run.".to_string(),
                ),
            },
            n => arity_error(name, "1 or 2", n),
        },
        ToolName::WebEvidence => match args.len() {
            1 => match env.web {
                Some(provider) => {
                    web_evidence(&args[0], provider, env.limits.snippet_limit)
                }
                None => ToolResult::error(
                    "Web_Evidence is not configured with a search backend in this run."
                        .to_string(),
                ),
            },
            n => arity_error(name, "1", n),
        },
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::{env, musk_graph};
    use super::*;
    use crate::kg::{EntityRecord, RelationRecord};
    use crate::retrieval::HashEncoder;
    use std::collections::BTreeSet;

    #[test]
    fn registry_lists_expected_signatures() {
        let specs = registry();
        assert_eq!(specs.len(), 6);
        let path = specs.iter().find(|s| s.name == ToolName::KgPath).unwrap();
        assert_eq!(path.parameters[0].0, "entity_a");
        assert_eq!(path.parameters[1].0, "entity_b");
        let web = specs.iter().find(|s| s.name == ToolName::WebEvidence).unwrap();
        assert_eq!(web.parameters.len(), 1);
        assert_eq!(web.parameters[0].0, "question");
    }

    #[test]
    fn alias_map_covers_historical_names() {
        assert_eq!(
            ToolName::from_alias("KG_Basic_Info_Tool"),
            Some(ToolName::KgDefinition)
        );
        assert_eq!(ToolName::from_alias("KG_Path_Tool"), Some(ToolName::KgPath));
        assert_eq!(
            ToolName::from_alias("web_evidence_tool"),
            Some(ToolName::WebEvidence)
        );
        assert_eq!(ToolName::from_alias("Frobnicate"), None);
    }

    #[test]
    fn filtered_registry_keeps_finish() {
        let only_external = filtered_registry(false, true);
        assert!(only_external.iter().all(|s| !s.name.is_kg()));
        assert!(only_external.iter().any(|s| s.name == ToolName::Finish));
        let none = filtered_registry(false, false);
        assert_eq!(none.len(), 1);
        assert_eq!(none[0].name, ToolName::Finish);
    }

    #[test]
    fn definition_renders_musk_profile() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let r = kg_definition("Elon Musk", TargetKind::Entity, &g, &enc);
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.rendering.contains("Entity Profile: Q317521"));
        assert!(r.rendering.contains("businessman and entrepreneur (born 1971)"));
        assert!(r.rendering.contains("Type: human"));
        assert!(r.rendering.contains("Aliases: Elon Reeve Musk"));
    }

    #[test]
    fn definition_renders_relation_with_open_domain() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let r = kg_definition("CEO", TargetKind::Relation, &g, &enc);
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.rendering.contains("Relation Profile: P169"));
        assert!(r.rendering.contains("chief executive officer"));
        assert!(r
            .rendering
            .contains("Subject Constraint (Domain): None defined (Open Domain / Any)"));
        assert!(r
            .rendering
            .contains("Object Constraint (Range): fictional company; organization"));
    }

    #[test]
    fn definition_garbage_is_empty_status() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let r = kg_definition("xyzzy frobnicate", TargetKind::Entity, &g, &enc);
        assert_eq!(r.status, ToolStatus::Empty);
        assert!(r.rendering.contains("xyzzy frobnicate"));
        assert!(!r.rendering.is_empty());
    }

    fn nguyen_graph() -> KnowledgeGraph {
        KnowledgeGraph::from_parts(
            vec![
                Triple::new("m.dat", "r.team", "m.aggies"),
                Triple::new("m.dat", "r.born", "1975-09-25"),
                Triple::new("m.dat", "r.position", "m.linebacker"),
            ],
            vec![
                EntityRecord {
                    id: "m.dat".into(),
                    label: "Dat Nguyen".into(),
                    description: "All-American college football player".into(),
                    aliases: vec!["Dat Tan Nguyen".into()],
                    type_signature: vec![],
                },
                EntityRecord {
                    id: "m.aggies".into(),
                    label: "Texas A&M Aggies football".into(),
                    description: "University American football team".into(),
                    aliases: vec![],
                    type_signature: vec![],
                },
                EntityRecord {
                    id: "m.linebacker".into(),
                    label: "linebacker".into(),
                    description: String::new(),
                    aliases: vec![],
                    type_signature: vec![],
                },
            ],
            vec![
                RelationRecord {
                    id: "r.team".into(),
                    label: "member of sports team".into(),
                    description: String::new(),
                    aliases: vec![],
                    domain_types: BTreeSet::new(),
                    range_types: BTreeSet::new(),
                },
                RelationRecord {
                    id: "r.born".into(),
                    label: "date of birth".into(),
                    description: String::new(),
                    aliases: vec![],
                    domain_types: BTreeSet::new(),
                    range_types: BTreeSet::new(),
                },
                RelationRecord {
                    id: "r.position".into(),
                    label: "position played".into(),
                    description: String::new(),
                    aliases: vec![],
                    domain_types: BTreeSet::new(),
                    range_types: BTreeSet::new(),
                },
            ],
            &BTreeSet::new(),
        )
    }

    #[test]
    fn neighbor_ranks_queried_relation_first() {
        let g = nguyen_graph();
        let enc = HashEncoder::new(64);
        let r = kg_neighbor(
            "Dat Nguyen",
            "member of sports team",
            &g,
            &enc,
            &ExclusionSet::empty(),
            20,
        );
        assert_eq!(r.status, ToolStatus::Ok);
        let lines: Vec<&str> = r.rendering.lines().collect();
        assert_eq!(lines[1], "[member of sports team] -> Texas A&M Aggies football");
        assert!(r.rendering.contains("[date of birth] -> 1975-09-25"));
        assert_eq!(r.payload.len(), 3);
    }

    #[test]
    fn neighbor_ranking_matches_cosine_oracle() {
        let g = nguyen_graph();
        let enc = HashEncoder::new(64);
        let query = "team membership";
        let r = kg_neighbor("m.dat", query, &g, &enc, &ExclusionSet::empty(), 20);
        // Oracle: brute-force cosine over each edge's relation label with the
        // same tie rule.
        let qv = enc.encode(query).unwrap();
        let res = kg::neighbors(&g, "m.dat", &ExclusionSet::empty());
        let mut oracle: Vec<(f64, String)> = res
            .edges
            .iter()
            .map(|e| {
                let sim = cosine(&qv, &enc.encode(g.label(&e.relation)).unwrap()).unwrap();
                (sim, g.label(&e.relation).to_string())
            })
            .collect();
        oracle.sort_by(|(sa, ra), (sb, rb)| sb.partial_cmp(sa).unwrap().then_with(|| ra.cmp(rb)));
        let rendered_order: Vec<String> = r
            .rendering
            .lines()
            .skip(1)
            .map(|l| l[1..l.find(']').unwrap()].to_string())
            .collect();
        let oracle_order: Vec<String> = oracle.into_iter().map(|(_, r)| r).collect();
        assert_eq!(rendered_order, oracle_order);
    }

    #[test]
    fn neighbor_exclusion_applies_before_scoring() {
        let g = nguyen_graph();
        let enc = HashEncoder::new(64);
        let exclude = ExclusionSet::single(Triple::new("m.dat", "r.team", "m.aggies"));
        let r = kg_neighbor("Dat Nguyen", "member of sports team", &g, &enc, &exclude, 20);
        assert!(!r.rendering.contains("Texas A&M"));
        assert_eq!(r.payload.len(), 2);
    }

    #[test]
    fn neighbor_limit_respected() {
        let g = nguyen_graph();
        let enc = HashEncoder::new(64);
        let r = kg_neighbor("Dat Nguyen", "anything", &g, &enc, &ExclusionSet::empty(), 1);
        assert_eq!(r.payload.len(), 1);
    }

    #[test]
    fn neighbor_unknown_entity_is_empty() {
        let g = nguyen_graph();
        let enc = HashEncoder::new(64);
        let r = kg_neighbor("zzzz qqqq", "team", &g, &enc, &ExclusionSet::empty(), 20);
        assert_eq!(r.status, ToolStatus::Empty);
    }

    #[test]
    fn dispatch_routes_definition() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        let r = dispatch(&ToolCall::new("KG_Definition", vec!["Tesla".into()]), &e);
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.rendering.contains("Tesla, Inc."));
    }

    #[test]
    fn dispatch_definition_keyword_kind() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        let r = dispatch(
            &ToolCall::new("KG_Basic_Info_Tool", vec!["CEO".into(), "relation".into()]),
            &e,
        );
        assert!(r.rendering.contains("Relation Profile: P169"));
    }

    #[test]
    fn dispatch_definition_bare_relation_name_inferred() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        // "employer" only matches the relation catalog, so inference picks it.
        let r = dispatch(&ToolCall::new("KG_Definition", vec!["employer".into()]), &e);
        assert!(r.rendering.contains("Relation Profile: P108"));
    }

    #[test]
    fn dispatch_unknown_tool_lists_valid_names() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        let r = dispatch(&ToolCall::new("Frobnicate", vec![]), &e);
        assert_eq!(r.status, ToolStatus::Error);
        assert!(r.rendering.contains("KG_Definition"));
        assert!(r.rendering.contains("Web_Evidence"));
    }

    #[test]
    fn dispatch_arity_mismatch() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        let r = dispatch(&ToolCall::new("KG_Path", vec!["a".into()]), &e);
        assert_eq!(r.status, ToolStatus::Error);
        assert!(r.rendering.contains("KG_Path expects 2"));
    }

    #[test]
    fn dispatch_ablated_group_refused() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let mut e = env(&g, &enc, ExclusionSet::empty());
        e.kg_enabled = false;
        let r = dispatch(&ToolCall::new("KG_Path", vec!["a".into(), "b".into()]), &e);
        assert_eq!(r.status, ToolStatus::Error);
        // The correction must not advertise the disabled group.
        assert!(!r.rendering.contains("Valid tools: KG_Definition"));
        assert!(r.rendering.contains("Wiki_Evidence"));
    }

    #[test]
    fn dispatch_format_error_route() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        let r = dispatch(&ToolCall::new(FORMAT_ERROR_TOOL, vec![]), &e);
        assert_eq!(r.status, ToolStatus::Error);
        assert!(r.rendering.contains("Thought:"));
        assert!(r.rendering.contains("Final Answer:"));
    }

    #[test]
    fn dispatch_missing_provider_is_error_status() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        let r = dispatch(&ToolCall::new("Web_Evidence", vec!["q".into()]), &e);
        assert_eq!(r.status, ToolStatus::Error);
        assert!(!r.rendering.is_empty());
    }

    #[test]
    fn every_dispatch_rendering_nonempty() {
        let g = musk_graph();
        let enc = HashEncoder::new(32);
        let e = env(&g, &enc, ExclusionSet::empty());
        let calls = [
            ToolCall::new("KG_Definition", vec![]),
            ToolCall::new("Finish", vec![]),
            ToolCall::new("", vec![]),
            ToolCall::new("KG_Neighbor", vec!["a".into(), "b".into(), "c".into()]),
            ToolCall::new("Wiki_Evidence", vec!["x".into()]),
        ];
        for call in &calls {
            assert!(!dispatch(call, &e).rendering.is_empty(), "{call:?}");
        }
    }
}
