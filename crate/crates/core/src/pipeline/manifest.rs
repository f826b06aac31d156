use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Artifact name to content hash, for every file the stage read.
    pub inputs: BTreeMap<String, String>,
    /// Hash of the stage's parameters.
    pub params: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            stages: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Data {
                stage: "manifest",
                message: format!("{}: {e}", path.display()),
            })
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))
    }

    pub fn record(&mut self, stage: &str, rec: StageRecord) {
        for (k, v) in &rec.outputs {
            self.artifacts.insert(k.clone(), v.clone());
        }
        self.stages.insert(stage.to_string(), rec);
    }

    /// The earlier record of `stage` if its inputs and parameters match and
    /// every output on disk still has the recorded hash.
    pub fn reusable(&self, stage: &str, inputs: &BTreeMap<String, String>, params: &str, dir: &Path) -> Option<StageRecord> {
        let rec = self.stages.get(stage)?;
        if &rec.inputs != inputs || rec.params != params || rec.outputs.is_empty() {
            return None;
        }
        for (name, hash) in &rec.outputs {
            match sha256_file(&dir.join(name)) {
                Ok(h) if &h == hash => {}
                _ => return None,
            }
        }
        Some(rec.clone())
    }
}
