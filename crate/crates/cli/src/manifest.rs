//! Run manifests: every successful subcommand emits one, carrying the
//! resolved configuration, digests of the input files, the tool version and
//! the wall-clock duration.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: serde_json::Value,
    pub input_digests: BTreeMap<String, String>,
    pub duration_seconds: f64,
}

pub struct ManifestBuilder {
    subcommand: String,
    config: serde_json::Value,
    digests: BTreeMap<String, String>,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config,
            digests: BTreeMap::new(),
            start: Instant::now(),
        }
    }

    /// Record the SHA-256 digest of an input file.
    pub fn digest_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading {} for digest", path.display()))?;
        let hash = Sha256::digest(&bytes);
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        self.digests.insert(path.display().to_string(), hex);
        Ok(())
    }

    pub fn finish(self) -> RunManifest {
        RunManifest {
            subcommand: self.subcommand,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            input_digests: self.digests,
            duration_seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// Print the standard output document: the manifest plus command-specific
/// result fields.
pub fn emit(manifest: &RunManifest, mut result: serde_json::Value) -> Result<()> {
    let doc = match result.as_object_mut() {
        Some(map) => {
            map.insert("manifest".into(), serde_json::to_value(manifest)?);
            serde_json::Value::Object(map.clone())
        }
        None => serde_json::json!({
            "manifest": serde_json::to_value(manifest)?,
            "result": result,
        }),
    };
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}
