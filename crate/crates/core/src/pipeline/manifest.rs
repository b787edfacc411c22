use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageOutcome {
    Completed,
    /// Skipped on resume because its artifacts were intact.
    Reused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub outcome: StageOutcome,
    pub wall_clock_secs: f64,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    /// File name (relative to the output directory) to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            stages: Vec::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Replaces any earlier record of the same stage.
    pub fn record(&mut self, rec: StageRecord, dir: &Path) -> Result<()> {
        if let Some(old) = self.stages.iter().position(|s| s.name == rec.name) {
            let old = self.stages.remove(old);
            for a in &old.artifacts {
                self.artifacts.remove(a);
            }
        }
        for a in &rec.artifacts {
            self.artifacts.insert(a.clone(), digest_file(&dir.join(a))?);
        }
        self.stages.push(rec);
        Ok(())
    }

    /// True when every artifact of `name` exists with its recorded digest.
    pub fn stage_intact(&self, name: &str, dir: &Path) -> bool {
        let Some(rec) = self.stage(name) else { return false };
        rec.outcome != StageOutcome::Failed
            && rec.artifacts.iter().all(|a| {
                let want = self.artifacts.get(a);
                let got = digest_file(&dir.join(a)).ok();
                want.is_some() && want == got.as_ref()
            })
    }

    /// Checks digests of all listed files and that no unlisted file exists.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, digest) in &self.artifacts {
            if &digest_file(&dir.join(name))? != digest {
                return Err(Error::Validation(format!("digest mismatch for {name}")));
            }
        }
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for e in entries {
            let e = e.map_err(|e| Error::io(dir, e))?;
            let name = e.file_name().to_string_lossy().into_owned();
            if name != MANIFEST_FILE && !self.artifacts.contains_key(&name) {
                return Err(Error::Validation(format!("{name} is not listed in the manifest")));
            }
        }
        Ok(())
    }

    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> RunManifest {
        let mut m = self.clone();
        for s in &mut m.stages {
            s.wall_clock_secs = 0.0;
        }
        m
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
