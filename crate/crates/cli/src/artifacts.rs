//! Stamped artifact files. Every line-delimited artifact starts with a
//! one-line JSON header naming its format and the checksum of the config
//! that produced it; the records follow, one per line, in the engine's own
//! serialization. Files without a header (hand-written test sets, for
//! example) still load, they just carry no stamp to cross-check.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{usage, CliError};

pub const TESTSET_FORMAT: &str = "kgverify/testset";
pub const SESSIONS_FORMAT: &str = "kgverify/sessions";
pub const VERSION: u32 = 1;

/// First line of a stamped artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl Header {
    pub fn new(format: &str, config_checksum: &str) -> Header {
        Header {
            format: format.to_string(),
            version: VERSION,
            config_checksum: config_checksum.to_string(),
            seed: None,
            count: None,
        }
    }
}

/// Write a header line followed by pre-rendered record lines.
pub fn write_stamped(path: &Path, header: &Header, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                usage(format!("cannot create directory {}: {e}", parent.display()))
            })?;
        }
    }
    let header_line = serde_json::to_string(header).expect("header serializes");
    let mut text = String::with_capacity(header_line.len() + 1 + body.len());
    text.push_str(&header_line);
    text.push('\n');
    text.push_str(body);
    fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

/// Read an artifact, splitting off the header when one is present. The body
/// comes back as raw text for the format-specific parser.
pub fn read_stamped(path: &Path) -> Result<(Option<Header>, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or_default();
    if let Ok(header) = serde_json::from_str::<Header>(first) {
        if header.format.starts_with("kgverify/") {
            let body_start = first.len() + text[first.len()..].starts_with('\n') as usize;
            return Ok((Some(header), text[body_start..].to_string()));
        }
    }
    Ok((None, text))
}
