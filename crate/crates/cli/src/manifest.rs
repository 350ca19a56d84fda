use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dt_core::{EpisodeConfig, TelemetryConfig};
use dt_learn::LearnerConfig;

/// The single JSON config file: every section optional, flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub telemetry: TelemetryConfig,
    pub episode: EpisodeConfig,
    pub learner: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything that determines a command's outputs. Written before any other
/// output so an interrupted command still records what it was doing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub corpus: FileDigest,
    /// Extra input files such as transcripts, scripts or policies.
    pub inputs: BTreeMap<String, FileDigest>,
    /// Resolved configuration after flag overrides.
    pub config: FileConfig,
    /// Command-specific settings not covered by the config file.
    pub settings: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, corpus: FileDigest, config: FileConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            corpus,
            inputs: BTreeMap::new(),
            config,
            settings: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let p = Self::path_in(dir);
        fs::write(&p, self.to_json()).with_context(|| format!("writing {}", p.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = Self::path_in(dir);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }
}
