use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plan::Plan;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// One executed command with everything needed to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub plan: Plan,
    pub seeds: BTreeMap<String, u64>,
    /// Outputs, relative to the run directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
}

/// Record of every command that wrote into a run directory, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_slice(&bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn load_or_new(run_dir: &Path) -> Result<Self> {
        let path = Self::path(run_dir);
        if path.exists() {
            Self::load(&path)
        } else {
            Ok(Self { version: MANIFEST_VERSION, entries: Vec::new() })
        }
    }

    pub fn append(run_dir: &Path, entry: ManifestEntry) -> Result<()> {
        let mut m = Self::load_or_new(run_dir)?;
        m.entries.push(entry);
        fs::write(Self::path(run_dir), serde_json::to_vec_pretty(&m)?)?;
        Ok(())
    }
}
