use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

/// Record of one experiment: the configuration, its hash, tool versions and
/// every file written with its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<OutputEntry>,
    /// Grid size used for each run, keyed by a run label.
    pub grid: BTreeMap<String, usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("chflow-cli".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("describe".into(), format!("chflow-cli-v{}", env!("CARGO_PKG_VERSION")));
        Self { config: cfg.clone(), config_hash: config_hash(cfg), versions, outputs: Vec::new(), grid: BTreeMap::new() }
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), bytes)?;
        self.outputs.push(OutputEntry { path: name.into(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// Writes `dir/manifest.json`.
    pub fn finish(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self).expect("manifest serializes"))
    }

    /// Names of recorded outputs whose current content no longer matches.
    pub fn stale_outputs(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| fs::read(dir.join(&o.path)).map_or(true, |b| sha256_hex(&b) != o.sha256))
            .map(|o| o.path.clone())
            .collect()
    }
}
