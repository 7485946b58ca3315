//! Run manifests: the resolved config, hashes of inputs and artifacts, and
//! the seeds used.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{LabError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    /// Hash of the resolved config text.
    pub config_hash: String,
    /// Seconds; not part of any hash.
    pub wall_clock_seconds: f64,
    pub checks_passed: usize,
    pub checks_failed: usize,
    pub seeds: BTreeMap<String, u64>,
    pub input_hashes: BTreeMap<String, String>,
    /// Output file (relative to the run directory) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        let text = config.to_toml();
        let config_hash = sha256_hex(text.as_bytes());
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.clone(),
            wall_clock_seconds: 0.0,
            checks_passed: 0,
            checks_failed: 0,
            seeds: BTreeMap::new(),
            input_hashes: [("config".to_string(), config_hash)].into_iter().collect(),
            artifacts: BTreeMap::new(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        toml::from_str(&text).map_err(|e| LabError::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, self.to_toml()).map_err(|e| LabError::io(&p, e))
    }

    /// Artifacts whose hashes differ from `other`, or that only one side has.
    pub fn artifact_mismatches(&self, other: &Self) -> Vec<String> {
        let mut out: Vec<String> = self
            .artifacts
            .iter()
            .filter(|(k, v)| other.artifacts.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        out.extend(other.artifacts.keys().filter(|k| !self.artifacts.contains_key(*k)).cloned());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = RunManifest::new(&RunConfig::default());
        m.artifacts.insert("a.sdf".into(), sha256_hex(b"x"));
        let back: RunManifest = toml::from_str(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        let mut other = back.clone();
        other.artifacts.insert("a.sdf".into(), sha256_hex(b"y"));
        other.artifacts.insert("b.csv".into(), sha256_hex(b"z"));
        assert_eq!(m.artifact_mismatches(&other), vec!["a.sdf".to_string(), "b.csv".to_string()]);
    }
}
