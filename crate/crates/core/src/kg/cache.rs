//! On-disk cache for a parsed graph, keyed to the source files.
//!
//! Parsing and indexing a large dump dominates startup, so the loader can
//! persist its result next to the data. The cache is invalidated by
//! fingerprinting each source file (byte size plus SHA-256); any edit, even
//! one that preserves size, forces a rebuild. Indices are recomputed on
//! load, which keeps the payload small and the consistency invariants true
//! by construction.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EntityRecord, KnowledgeGraph, RelationRecord, Triple};

const MAGIC: &[u8; 4] = b"KGVC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {path}: bad magic or truncated header")]
    BadHeader { path: String },
    #[error("cache {path}: version {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("cache {path}: source files changed since the cache was written")]
    Stale { path: String },
    #[error("cache {path}: payload is corrupt: {source}")]
    Corrupt {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct Payload {
    typing_relations: BTreeSet<String>,
    triples: Vec<Triple>,
    entities: Vec<EntityRecord>,
    relations: Vec<RelationRecord>,
}

struct Fingerprint {
    size: u64,
    digest: [u8; 32],
}

fn fingerprint(path: &Path) -> Result<Fingerprint, CacheError> {
    let bytes = fs::read(path).map_err(|source| CacheError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(Fingerprint {
        size: bytes.len() as u64,
        digest: hasher.finalize().into(),
    })
}

/// Write `graph` to `cache_path`, fingerprinting the three source files it
/// was loaded from.
pub fn write_cache(
    cache_path: &Path,
    graph: &KnowledgeGraph,
    typing_relations: &BTreeSet<String>,
    sources: [&Path; 3],
) -> Result<(), CacheError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for src in sources {
        let fp = fingerprint(src)?;
        buf.extend_from_slice(&fp.size.to_le_bytes());
        buf.extend_from_slice(&fp.digest);
    }

    let mut triples: Vec<Triple> = graph.triples().cloned().collect();
    triples.sort();
    let mut entities: Vec<EntityRecord> = graph.entities().cloned().collect();
    entities.sort_by(|a, b| a.id.cmp(&b.id));
    let mut relations: Vec<RelationRecord> = graph.relations().cloned().collect();
    relations.sort_by(|a, b| a.id.cmp(&b.id));
    let payload = Payload {
        typing_relations: typing_relations.clone(),
        triples,
        entities,
        relations,
    };
    let json = serde_json::to_vec(&payload).expect("payload serializes");
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);

    let mut f = fs::File::create(cache_path).map_err(|source| CacheError::Io {
        path: cache_path.display().to_string(),
        source,
    })?;
    f.write_all(&buf).map_err(|source| CacheError::Io {
        path: cache_path.display().to_string(),
        source,
    })
}

/// Read a cached graph, verifying the header and the fingerprints of the
/// current source files. A [`CacheError::Stale`] result means the caller
/// should reparse and rewrite.
pub fn read_cache(cache_path: &Path, sources: [&Path; 3]) -> Result<KnowledgeGraph, CacheError> {
    let err_path = || cache_path.display().to_string();
    let mut f = fs::File::open(cache_path).map_err(|source| CacheError::Io {
        path: err_path(),
        source,
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|source| CacheError::Io {
        path: err_path(),
        source,
    })?;

    // 4 magic + 4 version + 3 * (8 size + 32 digest) + 8 payload length.
    const HEADER: usize = 4 + 4 + 3 * 40 + 8;
    if bytes.len() < HEADER || &bytes[0..4] != MAGIC {
        return Err(CacheError::BadHeader { path: err_path() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CacheError::VersionMismatch {
            path: err_path(),
            found: version,
            expected: VERSION,
        });
    }
    let mut offset = 8;
    for src in sources {
        let recorded_size = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        let recorded_digest: [u8; 32] = bytes[offset + 8..offset + 40].try_into().unwrap();
        offset += 40;
        let fp = fingerprint(src)?;
        if fp.size != recorded_size || fp.digest != recorded_digest {
            return Err(CacheError::Stale { path: err_path() });
        }
    }
    let payload_len = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()) as usize;
    offset += 8;
    if bytes.len() < offset + payload_len {
        return Err(CacheError::BadHeader { path: err_path() });
    }
    let payload: Payload =
        serde_json::from_slice(&bytes[offset..offset + payload_len]).map_err(|source| {
            CacheError::Corrupt {
                path: err_path(),
                source,
            }
        })?;
    Ok(KnowledgeGraph::from_parts(
        payload.triples,
        payload.entities,
        payload.relations,
        &payload.typing_relations,
    ))
}
