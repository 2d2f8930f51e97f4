//! Service manifests: one `key=value` per line.
//!
//! ```text
//! id=ASR_Local
//! contract=ASR
//! placement=LOCAL
//! cap.needs_network=false
//! dep=NLU
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Placement, ServiceDescriptor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub fn parse_manifest(text: &str) -> Result<ServiceDescriptor, ManifestError> {
    let mut id = None;
    let mut contract = None;
    let mut placement = Placement::Local;
    let mut endpoint = None;
    let mut capabilities = BTreeMap::new();
    let mut dependencies = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |msg: String| ManifestError::Malformed { line: i + 1, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected key=value, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "id" => id = Some(value.to_string()),
            "contract" => contract = Some(value.to_string()),
            "placement" => {
                placement = match value.to_ascii_uppercase().as_str() {
                    "LOCAL" => Placement::Local,
                    "REMOTE" => Placement::Remote,
                    _ => return Err(malformed(format!("placement must be LOCAL or REMOTE, got `{value}`"))),
                }
            }
            "endpoint" => endpoint = Some(value.to_string()),
            "dep" => dependencies.push(value.to_string()),
            k => match k.strip_prefix("cap.") {
                Some(name) if !name.is_empty() => {
                    capabilities.insert(name.to_string(), value.to_string());
                }
                _ => return Err(malformed(format!("unknown key `{k}`"))),
            },
        }
    }
    let descriptor = ServiceDescriptor {
        service_id: id.ok_or(ManifestError::Missing("id"))?,
        contract: contract.ok_or(ManifestError::Missing("contract"))?,
        placement,
        endpoint,
        capabilities,
        dependencies,
    };
    descriptor
        .validate()
        .map_err(|e| ManifestError::Invalid(e.to_string()))?;
    Ok(descriptor)
}
