//! Run-directory manifests: configuration hash plus content hashes of artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: &str = "1.0.0";

/// Git-style object hash: `sha256("blob <len>\0" || content)`.
pub fn blob_sha256(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let config_sha256 = sha256_hex(&serde_json::to_vec(&config).expect("JSON values serialize"));
        Manifest { version: MANIFEST_VERSION.into(), command: command.into(), config, config_sha256, artifacts: BTreeMap::new() }
    }
}

/// Collects artifacts written into one run directory.
pub struct RunDir<'a> {
    pub dir: &'a Path,
    pub manifest: Manifest,
}

impl<'a> RunDir<'a> {
    pub fn create(dir: &'a Path, command: &str, config: serde_json::Value) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunDir { dir, manifest: Manifest::new(command, config) })
    }

    pub fn write(&mut self, name: &str, content: &[u8]) -> std::io::Result<()> {
        fs::write(self.dir.join(name), content)?;
        self.manifest.artifacts.insert(name.into(), blob_sha256(content));
        Ok(())
    }

    pub fn finish(self) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(self.dir.join("manifest.json"), json)
    }
}
