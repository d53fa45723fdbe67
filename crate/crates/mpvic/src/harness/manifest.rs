//! Run manifest: the reproducibility record written at the end of every run.
//! It pins the resolved config (verbatim and hashed), the seed, artifact
//! schema versions, wall times, and every file the run produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;

/// Episode CSV layout version; bump when columns change.
pub const EPISODE_LOG_SCHEMA: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactVersions {
    pub package: String,
    pub episode_log_schema: u32,
    pub checkpoint: u32,
}

impl ArtifactVersions {
    pub fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_VERSION").to_string(),
            episode_log_schema: EPISODE_LOG_SCHEMA,
            checkpoint: crate::penn::CHECKPOINT_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: String,
    pub seed: u64,
    pub config_sha256: String,
    /// The resolved config verbatim; rerunning it reproduces the outputs.
    pub config: ExperimentConfig,
    pub versions: ArtifactVersions,
    /// Whole-run wall time plus named phases (episodes, training, summary...).
    pub wall_time_s: f64,
    pub phase_seconds: BTreeMap<String, f64>,
    /// Every file the run wrote, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub command: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, command: Vec<String>) -> Self {
        Self {
            mode: cfg.mode().name().to_string(),
            seed: cfg.seed,
            config_sha256: cfg.sha256(),
            config: cfg.clone(),
            versions: ArtifactVersions::current(),
            wall_time_s: 0.0,
            phase_seconds: BTreeMap::new(),
            outputs: Vec::new(),
            command,
        }
    }

    pub fn record_output(&mut self, rel: impl Into<String>) {
        self.outputs.push(rel.into());
    }

    pub fn record_phase(&mut self, name: &str, seconds: f64) {
        *self.phase_seconds.entry(name.to_string()).or_insert(0.0) += seconds;
    }

    /// Write `manifest.json` into `dir` via a temp file and rename, so a
    /// manifest either exists complete or not at all.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Runtime(format!("manifest serialize: {e}")))?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Runtime(format!("manifest parse: {e}")))
    }
}
