//! The run configuration: one declarative TOML file, a handful of flag
//! overrides, and a checksum that stamps every artifact a run produces.
//!
//! Input paths inside the file resolve against the file's directory, so a
//! config can travel with its fixtures; the output directory resolves
//! against the working directory. The checksum is the SHA-256 of the
//! canonical serialization of the effective config (file plus overrides),
//! computed before path resolution, and `report` refuses to aggregate files
//! stamped with different checksums unless forced.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kgverify::agent::{Ablations, Mode, SessionConfig};
use kgverify::llm::Pricing;
use kgverify::retrieval::HybridConfig;
use kgverify::tools::ToolLimits;

use crate::error::{usage, CliError};

/// Everything a run can configure. Every field has a default, so an empty
/// file (or none at all) is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub encoder: EncoderSection,
    pub backend: BackendSection,
    pub wiki: ProviderSection,
    pub web: ProviderSection,
    pub memory: MemorySection,
    pub prompts: PromptsSection,
    pub hybrid: HybridConfig,
    pub limits: LimitsSection,
    pub session: SessionSection,
    pub sample: SampleSection,
    pub pricing: Pricing,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSection::default(),
            encoder: EncoderSection::default(),
            backend: BackendSection::default(),
            wiki: ProviderSection::default(),
            web: ProviderSection::default(),
            memory: MemorySection::default(),
            prompts: PromptsSection::default(),
            hybrid: HybridConfig::default(),
            limits: LimitsSection::default(),
            session: SessionSection::default(),
            sample: SampleSection::default(),
            pricing: Pricing::default(),
            output: OutputSection::default(),
        }
    }
}

/// Where the graph lives and which relations define entity types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory holding the TSV files. Default `.`.
    pub dir: PathBuf,
    /// Triples file inside `dir`. Default `triples.tsv`.
    pub triples: PathBuf,
    /// Entity metadata file inside `dir`. Default `entities.tsv`.
    pub entities: PathBuf,
    /// Relation metadata file inside `dir`. Default `relations.tsv`.
    pub relations: PathBuf,
    /// Relations whose edges are type assignments. Default `["P31"]`.
    pub typing_relations: BTreeSet<String>,
    /// Optional binary graph cache inside `dir`, rebuilt whenever a source
    /// file changes. Default none.
    pub cache: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            dir: PathBuf::from("."),
            triples: PathBuf::from("triples.tsv"),
            entities: PathBuf::from("entities.tsv"),
            relations: PathBuf::from("relations.tsv"),
            typing_relations: BTreeSet::from(["P31".to_string()]),
            cache: None,
        }
    }
}

/// Which text encoder backs dense retrieval and memory lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// `hash` (deterministic, offline), `table` (precomputed vectors), or
    /// `remote` (embedding endpoint). Default `hash`.
    pub kind: String,
    /// Vector dimension. Default 256.
    pub dimension: usize,
    /// Vector table file, required when `kind = "table"`. Default none.
    pub table: Option<PathBuf>,
    /// Endpoint URL, required when `kind = "remote"`. Default empty.
    pub url: String,
    /// Model name sent to the endpoint. Default empty.
    pub model: String,
    /// Environment variable holding the API key; empty sends no credential.
    /// Default `KGVERIFY_ENCODER_API_KEY`.
    pub api_key_env: String,
    /// Request timeout in seconds. Default 60.
    pub timeout_secs: u64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            kind: "hash".to_string(),
            dimension: 256,
            table: None,
            url: String::new(),
            model: String::new(),
            api_key_env: "KGVERIFY_ENCODER_API_KEY".to_string(),
            timeout_secs: 60,
        }
    }
}

/// Which model backend drives the sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// `scripted` (offline replay) or `remote` (chat-completions endpoint).
    /// Default `scripted`.
    pub kind: String,
    /// Reply script, required when `kind = "scripted"`. Default none.
    pub script: Option<PathBuf>,
    /// Scripted entries fire once, in file order, by default; a stateless
    /// script never consumes entries, which suits concurrent batches.
    /// Default false.
    pub stateless: bool,
    /// Endpoint URL, required when `kind = "remote"`. Default empty.
    pub url: String,
    /// Model name sent to the endpoint. Default empty.
    pub model: String,
    /// Environment variable holding the API key; empty sends no credential.
    /// Default `KGVERIFY_API_KEY`.
    pub api_key_env: String,
    /// Request timeout in seconds. Default 60.
    pub timeout_secs: u64,
    /// Extra attempts after a transient failure. Default 3.
    pub max_retries: u32,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: "scripted".to_string(),
            script: None,
            stateless: false,
            url: String::new(),
            model: String::new(),
            api_key_env: "KGVERIFY_API_KEY".to_string(),
            timeout_secs: 60,
            max_retries: 3,
        }
    }
}

/// One external evidence provider (the wiki lookup or the web search).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    /// `off`, `fixture` (offline file), or `remote`. Default `off`.
    pub kind: String,
    /// Fixture file, required when `kind = "fixture"`. Default none.
    pub path: Option<PathBuf>,
    /// Endpoint URL, required when `kind = "remote"`. Default empty.
    pub url: String,
    /// Environment variable holding the API key; empty sends no credential.
    /// Default empty.
    pub api_key_env: String,
    /// Request timeout in seconds. Default 60.
    pub timeout_secs: u64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: "off".to_string(),
            path: None,
            url: String::new(),
            api_key_env: String::new(),
            timeout_secs: 60,
        }
    }
}

/// The demonstration bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    /// Trajectory file; absent means an empty bank. Default none.
    pub path: Option<PathBuf>,
    /// Demonstrations retrieved per session. Default 3.
    pub k: usize,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection { path: None, k: 3 }
    }
}

/// Prompt template overrides; absent fields keep the built-in templates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsSection {
    /// Planning template file. Default none (built-in).
    pub plan: Option<PathBuf>,
    /// Reasoning-loop template file. Default none (built-in).
    pub reasoning: Option<PathBuf>,
    /// Mandatory-judgment template file. Default none (built-in).
    pub judgment: Option<PathBuf>,
}

/// Per-call tool bounds. Mirrors the engine's limits, with `degree_cap = 0`
/// meaning "no cap" (the engine expresses that as an absent value, which
/// TOML cannot write).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSection {
    /// Neighbor edges listed per lookup. Default 20.
    pub neighbor_limit: usize,
    /// Longest path searched, capped at 3 by the engine. Default 3.
    pub max_hops: usize,
    /// Paths returned per query. Default 20.
    pub max_paths: usize,
    /// Skip expanding nodes whose degree exceeds this; 0 disables the
    /// pruning. Default 1000.
    pub degree_cap: usize,
    /// Word-distance threshold for wiki co-occurrence snippets. Default 50.
    pub tau_words: usize,
    /// Snippets returned per evidence call. Default 5.
    pub snippet_limit: usize,
}

impl Default for LimitsSection {
    fn default() -> Self {
        let d = ToolLimits::default();
        LimitsSection {
            neighbor_limit: d.neighbor_limit,
            max_hops: d.max_hops,
            max_paths: d.max_paths,
            degree_cap: d.degree_cap.unwrap_or(0),
            tau_words: d.tau_words,
            snippet_limit: d.snippet_limit,
        }
    }
}

impl LimitsSection {
    pub fn to_limits(self) -> ToolLimits {
        ToolLimits {
            neighbor_limit: self.neighbor_limit,
            max_hops: self.max_hops,
            max_paths: self.max_paths,
            degree_cap: (self.degree_cap > 0).then_some(self.degree_cap),
            tau_words: self.tau_words,
            snippet_limit: self.snippet_limit,
        }
    }
}

/// How each verification session runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    /// Turn budget of the reasoning loop. Default 10.
    pub t_max: usize,
    /// `agent`, `rag`, or `zeroshot`. Default `agent`.
    pub mode: String,
    /// Feature groups to disable: any of `memory`, `planning`, `kg`,
    /// `external`. Default none.
    pub ablate: Vec<String>,
    /// Width of the session pool. Default 1.
    pub concurrency: usize,
    /// Ask for a prior-impression statement before investigating.
    /// Default false.
    pub capture_impression: bool,
    /// Replacement text for the judgment-criteria prompt slot; empty keeps
    /// the built-in text. Default empty.
    pub judgment_criteria: String,
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection {
            t_max: 10,
            mode: "agent".to_string(),
            ablate: Vec::new(),
            concurrency: 1,
            capture_impression: false,
            judgment_criteria: String::new(),
        }
    }
}

/// Test-set sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    /// Balanced sample size; must be even. Default 1000.
    pub n: usize,
    /// Sampling seed. Default 13.
    pub seed: u64,
    /// Reject corruptions that collide with stored facts. Default true.
    pub exclude_known_facts: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            n: 1000,
            seed: 13,
            exclude_known_facts: true,
        }
    }
}

/// Where artifacts land.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for default artifact paths and the config echo, resolved
    /// against the working directory. Default `runs`.
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs"),
        }
    }
}

/// Flag values that shadow the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub mode: Option<String>,
    pub ablate: Vec<String>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub concurrency: Option<usize>,
}

/// Input paths after resolution, ready to open.
#[derive(Debug, Clone)]
pub struct ResolvedPaths {
    pub triples: PathBuf,
    pub entities: PathBuf,
    pub relations: PathBuf,
    pub cache: Option<PathBuf>,
    pub encoder_table: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub wiki: Option<PathBuf>,
    pub web: Option<PathBuf>,
    pub memory: Option<PathBuf>,
    pub prompt_plan: Option<PathBuf>,
    pub prompt_reasoning: Option<PathBuf>,
    pub prompt_judgment: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// The loaded, validated configuration a command runs under.
#[derive(Debug, Clone)]
pub struct Effective {
    pub config: RunConfig,
    /// The exact serialization the checksum covers; echoed verbatim.
    pub canonical: String,
    /// SHA-256 of `canonical`, lowercase hex.
    pub checksum: String,
    pub paths: ResolvedPaths,
}

impl Effective {
    /// The readable stamp used in console output.
    pub fn short_checksum(&self) -> &str {
        &self.checksum[..12]
    }

    /// Write the full effective config next to the artifacts, named by its
    /// checksum, so any stamped file can be traced back to the exact
    /// configuration that produced it.
    pub fn echo(&self) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.paths.output_dir).map_err(|e| {
            usage(format!(
                "cannot create output directory {}: {e}",
                self.paths.output_dir.display()
            ))
        })?;
        let path = self
            .paths
            .output_dir
            .join(format!("config-{}.toml", self.short_checksum()));
        fs::write(&path, &self.canonical)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Read the config file (or start from defaults), fold in the overrides,
/// validate, and stamp.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Effective, CliError> {
    let cwd = std::env::current_dir().map_err(|e| usage(format!("cannot read cwd: {e}")))?;
    let (mut config, base) = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            let config: RunConfig = toml::from_str(&text)
                .map_err(|e| usage(format!("config {}: {e}", p.display())))?;
            let base = match p.parent() {
                Some(parent) if parent != Path::new("") => absolute(&cwd, parent),
                _ => cwd.clone(),
            };
            (config, base)
        }
        None => (RunConfig::default(), cwd.clone()),
    };

    if let Some(dir) = &overrides.dataset {
        config.dataset.dir = absolute(&cwd, dir);
    }
    if let Some(mode) = &overrides.mode {
        config.session.mode = mode.clone();
    }
    config
        .session
        .ablate
        .extend(overrides.ablate.iter().cloned());
    config.session.ablate.sort();
    config.session.ablate.dedup();
    if let Some(seed) = overrides.seed {
        config.sample.seed = seed;
    }
    if let Some(n) = overrides.n {
        config.sample.n = n;
    }
    if let Some(c) = overrides.concurrency {
        config.session.concurrency = c;
    }

    validate(&config)?;

    let canonical =
        toml::to_string_pretty(&config).map_err(|e| usage(format!("config serialization: {e}")))?;
    let digest = Sha256::digest(canonical.as_bytes());
    let checksum: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let paths = resolve_paths(&config, &base, &cwd);

    Ok(Effective {
        config,
        canonical,
        checksum,
        paths,
    })
}

fn absolute(cwd: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        cwd.join(p)
    }
}

fn resolve_paths(config: &RunConfig, base: &Path, cwd: &Path) -> ResolvedPaths {
    let dir = absolute(base, &config.dataset.dir);
    let in_dir = |p: &Path| absolute(&dir, p);
    let in_base = |p: &Option<PathBuf>| p.as_deref().map(|p| absolute(base, p));
    ResolvedPaths {
        triples: in_dir(&config.dataset.triples),
        entities: in_dir(&config.dataset.entities),
        relations: in_dir(&config.dataset.relations),
        cache: config.dataset.cache.as_deref().map(in_dir),
        encoder_table: in_base(&config.encoder.table),
        script: in_base(&config.backend.script),
        wiki: in_base(&config.wiki.path),
        web: in_base(&config.web.path),
        memory: in_base(&config.memory.path),
        prompt_plan: in_base(&config.prompts.plan),
        prompt_reasoning: in_base(&config.prompts.reasoning),
        prompt_judgment: in_base(&config.prompts.judgment),
        output_dir: absolute(cwd, &config.output.dir),
    }
}

pub fn parse_mode(name: &str) -> Result<Mode, CliError> {
    match name {
        "agent" => Ok(Mode::Agent),
        "rag" => Ok(Mode::RagBaseline),
        "zeroshot" => Ok(Mode::ZeroShot),
        other => Err(usage(format!(
            "unknown mode `{other}` (expected agent, rag, or zeroshot)"
        ))),
    }
}

pub fn parse_ablations(names: &[String]) -> Result<Ablations, CliError> {
    let mut ablations = Ablations::default();
    for name in names {
        match name.as_str() {
            "memory" => ablations.memory = false,
            "planning" => ablations.planning = false,
            "kg" => ablations.kg_tools = false,
            "external" => ablations.external_tools = false,
            other => {
                return Err(usage(format!(
                    "unknown ablation `{other}` (expected memory, planning, kg, or external)"
                )))
            }
        }
    }
    Ok(ablations)
}

fn expect_kind(section: &str, kind: &str, allowed: &[&str]) -> Result<(), CliError> {
    if allowed.contains(&kind) {
        Ok(())
    } else {
        Err(usage(format!(
            "{section}.kind `{kind}` is not one of {}",
            allowed.join(", ")
        )))
    }
}

fn validate(config: &RunConfig) -> Result<(), CliError> {
    parse_mode(&config.session.mode)?;
    parse_ablations(&config.session.ablate)?;
    config.hybrid.validate().map_err(usage)?;
    if config.session.t_max == 0 {
        return Err(usage("session.t_max must be at least 1"));
    }
    if config.session.concurrency == 0 {
        return Err(usage("session.concurrency must be at least 1"));
    }
    if config.encoder.dimension == 0 {
        return Err(usage("encoder.dimension must be positive"));
    }

    expect_kind("encoder", &config.encoder.kind, &["hash", "table", "remote"])?;
    match config.encoder.kind.as_str() {
        "table" if config.encoder.table.is_none() => {
            return Err(usage("encoder.table is required when encoder.kind = \"table\""));
        }
        "remote" if config.encoder.url.is_empty() => {
            return Err(usage("encoder.url is required when encoder.kind = \"remote\""));
        }
        _ => {}
    }

    expect_kind("backend", &config.backend.kind, &["scripted", "remote"])?;
    match config.backend.kind.as_str() {
        "scripted" if config.backend.script.is_none() => {
            return Err(usage("backend.script is required when backend.kind = \"scripted\""));
        }
        "remote" if config.backend.url.is_empty() => {
            return Err(usage("backend.url is required when backend.kind = \"remote\""));
        }
        _ => {}
    }

    for (name, provider) in [("wiki", &config.wiki), ("web", &config.web)] {
        expect_kind(name, &provider.kind, &["off", "fixture", "remote"])?;
        match provider.kind.as_str() {
            "fixture" if provider.path.is_none() => {
                return Err(usage(format!(
                    "{name}.path is required when {name}.kind = \"fixture\""
                )));
            }
            "remote" if provider.url.is_empty() => {
                return Err(usage(format!(
                    "{name}.url is required when {name}.kind = \"remote\""
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Assemble the engine-side session settings.
pub fn session_config(config: &RunConfig) -> Result<SessionConfig, CliError> {
    let mut sc = SessionConfig {
        t_max: config.session.t_max,
        k_memory: config.memory.k,
        ablations: parse_ablations(&config.session.ablate)?,
        mode: parse_mode(&config.session.mode)?,
        capture_impression: config.session.capture_impression,
        ..SessionConfig::default()
    };
    if !config.session.judgment_criteria.is_empty() {
        sc.judgment_criteria = config.session.judgment_criteria.clone();
    }
    Ok(sc)
}
