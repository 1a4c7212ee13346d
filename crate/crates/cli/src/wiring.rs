//! Build the live objects a run needs from the resolved configuration:
//! graph (through the binary cache when one is configured), encoder,
//! evidence providers, demonstration bank, prompt templates, and the model
//! backend. Credentials only ever come from the environment variables the
//! config names.

use std::fs;
use std::time::Duration;

use kgverify::agent::PromptTemplates;
use kgverify::http::{
    credential_from_env, RemoteChat, RemoteEncoder, RemoteWeb, RemoteWiki, ReqwestTransport,
    RetryPolicy,
};
use kgverify::kg::{self, KnowledgeGraph};
use kgverify::llm::{Backend, ScriptedBackend};
use kgverify::memory::{load_memory, MemoryBank};
use kgverify::retrieval::{Encoder, HashEncoder, TableEncoder};
use kgverify::tools::{FixtureWeb, FixtureWiki, WebProvider, WikiProvider};

use crate::config::Effective;
use crate::error::{usage, CliError};

/// What the graph loader did about the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Written,
    Off,
}

impl CacheStatus {
    pub fn describe(self) -> &'static str {
        match self {
            CacheStatus::Hit => "hit",
            CacheStatus::Written => "written",
            CacheStatus::Off => "off",
        }
    }
}

/// Load the graph, going through the binary cache when the config names
/// one. A stale or unreadable cache is rebuilt, never an error.
pub fn load_graph_cached(eff: &Effective) -> Result<(KnowledgeGraph, CacheStatus), CliError> {
    let paths = &eff.paths;
    let sources = [
        paths.triples.as_path(),
        paths.entities.as_path(),
        paths.relations.as_path(),
    ];
    let Some(cache_path) = &paths.cache else {
        let graph = kg::load_graph(
            &paths.triples,
            &paths.entities,
            &paths.relations,
            &eff.config.dataset.typing_relations,
        )
        .map_err(usage)?;
        return Ok((graph, CacheStatus::Off));
    };

    if cache_path.exists() {
        match kg::read_cache(cache_path, sources) {
            Ok(graph) => return Ok((graph, CacheStatus::Hit)),
            Err(e) => log::info!("cache {} unusable ({e}); reloading", cache_path.display()),
        }
    }
    let graph = kg::load_graph(
        &paths.triples,
        &paths.entities,
        &paths.relations,
        &eff.config.dataset.typing_relations,
    )
    .map_err(usage)?;
    kg::write_cache(
        cache_path,
        &graph,
        &eff.config.dataset.typing_relations,
        sources,
    )
    .map_err(|e| usage(format!("cannot write cache {}: {e}", cache_path.display())))?;
    Ok((graph, CacheStatus::Written))
}

/// The owned session environment; `SessionEnv` borrows from it.
pub struct World {
    pub graph: KnowledgeGraph,
    pub encoder: Box<dyn Encoder>,
    pub wiki: Option<Box<dyn WikiProvider>>,
    pub web: Option<Box<dyn WebProvider>>,
    pub bank: MemoryBank,
    pub templates: PromptTemplates,
}

fn transport(timeout_secs: u64) -> Result<Box<ReqwestTransport>, CliError> {
    ReqwestTransport::new(Duration::from_secs(timeout_secs))
        .map(Box::new)
        .map_err(|e| usage(format!("http client: {e}")))
}

fn credential(env_name: &str) -> Option<String> {
    if env_name.is_empty() {
        None
    } else {
        credential_from_env(env_name)
    }
}

fn build_encoder(eff: &Effective) -> Result<Box<dyn Encoder>, CliError> {
    let section = &eff.config.encoder;
    match section.kind.as_str() {
        "hash" => Ok(Box::new(HashEncoder::new(section.dimension))),
        "table" => {
            let path = eff.paths.encoder_table.as_deref().expect("validated");
            Ok(Box::new(
                TableEncoder::load(path, section.dimension).map_err(usage)?,
            ))
        }
        "remote" => Ok(Box::new(RemoteEncoder::new(
            transport(section.timeout_secs)?,
            section.url.clone(),
            section.model.clone(),
            credential(&section.api_key_env),
            RetryPolicy::default(),
            section.dimension,
        ))),
        other => unreachable!("validated encoder kind {other}"),
    }
}

fn build_wiki(eff: &Effective) -> Result<Option<Box<dyn WikiProvider>>, CliError> {
    let section = &eff.config.wiki;
    match section.kind.as_str() {
        "off" => Ok(None),
        "fixture" => {
            let path = eff.paths.wiki.as_deref().expect("validated");
            Ok(Some(Box::new(FixtureWiki::load(path).map_err(usage)?)))
        }
        "remote" => Ok(Some(Box::new(RemoteWiki::new(
            transport(section.timeout_secs)?,
            section.url.clone(),
            credential(&section.api_key_env),
            RetryPolicy::default(),
        )))),
        other => unreachable!("validated wiki kind {other}"),
    }
}

fn build_web(eff: &Effective) -> Result<Option<Box<dyn WebProvider>>, CliError> {
    let section = &eff.config.web;
    match section.kind.as_str() {
        "off" => Ok(None),
        "fixture" => {
            let path = eff.paths.web.as_deref().expect("validated");
            Ok(Some(Box::new(FixtureWeb::load(path).map_err(usage)?)))
        }
        "remote" => Ok(Some(Box::new(RemoteWeb::new(
            transport(section.timeout_secs)?,
            section.url.clone(),
            credential(&section.api_key_env),
            RetryPolicy::default(),
        )))),
        other => unreachable!("validated web kind {other}"),
    }
}

fn build_templates(eff: &Effective) -> Result<PromptTemplates, CliError> {
    let mut templates = PromptTemplates::default();
    for (slot, path) in [
        (&mut templates.plan, &eff.paths.prompt_plan),
        (&mut templates.reasoning, &eff.paths.prompt_reasoning),
        (&mut templates.judgment, &eff.paths.prompt_judgment),
    ] {
        if let Some(p) = path {
            *slot = fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read template {}: {e}", p.display())))?;
        }
    }
    Ok(templates)
}

/// Assemble everything a `SessionEnv` borrows, around an already-loaded
/// graph.
pub fn build_world(eff: &Effective, graph: KnowledgeGraph) -> Result<World, CliError> {
    let encoder = build_encoder(eff)?;
    let bank = match &eff.paths.memory {
        Some(path) => load_memory(path, encoder.as_ref()).map_err(usage)?,
        None => MemoryBank::empty(encoder.dimension()),
    };
    Ok(World {
        graph,
        encoder,
        wiki: build_wiki(eff)?,
        web: build_web(eff)?,
        bank,
        templates: build_templates(eff)?,
    })
}

/// The model backend the sessions talk to.
pub fn build_backend(eff: &Effective) -> Result<Box<dyn Backend>, CliError> {
    let section = &eff.config.backend;
    match section.kind.as_str() {
        "scripted" => {
            let path = eff.paths.script.as_deref().expect("validated");
            let backend = if section.stateless {
                ScriptedBackend::load_stateless(path)
            } else {
                ScriptedBackend::load(path)
            };
            Ok(Box::new(backend.map_err(usage)?))
        }
        "remote" => Ok(Box::new(RemoteChat::new(
            transport(section.timeout_secs)?,
            section.url.clone(),
            section.model.clone(),
            credential(&section.api_key_env),
            RetryPolicy {
                max_retries: section.max_retries,
                ..RetryPolicy::default()
            },
        ))),
        other => unreachable!("validated backend kind {other}"),
    }
}
