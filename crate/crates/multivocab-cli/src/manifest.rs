//! Run manifest: every stage appends a record of its config hash, seed, and
//! the content hashes of its inputs and outputs. Before a stage runs, its
//! upstream artifacts are checked against the recorded hashes so tampered or
//! stale intermediates are caught instead of silently consumed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::stages::Stage;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    /// Path (relative to the workdir when inside it) to content hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// True when every output already existed with identical bytes.
    pub noop: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub records: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(workdir: &Path) -> Result<Self, CliError> {
        let path = workdir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("corrupt manifest {}: {e}", path.display())))
    }

    pub fn save(&self, workdir: &Path) -> Result<(), CliError> {
        let path = workdir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).expect("serializable");
        fs::write(&path, json)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }

    /// Most recent recorded output hash for a workdir-relative path.
    pub fn recorded_output(&self, rel: &str) -> Option<&str> {
        self.records
            .iter()
            .rev()
            .find_map(|r| r.outputs.get(rel).map(String::as_str))
    }
}

/// Workdir-relative display form for manifest keys; external paths (input
/// corpora) stay as given.
pub fn manifest_key(workdir: &Path, path: &Path) -> String {
    match path.strip_prefix(workdir) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => path.to_string_lossy().into_owned(),
    }
}

/// Verifies that each upstream artifact exists and, for artifacts produced
/// inside the workdir, still matches the hash its producing stage recorded.
pub fn verify_inputs(
    manifest: &Manifest,
    workdir: &Path,
    inputs: &[PathBuf],
) -> Result<BTreeMap<String, String>, CliError> {
    let mut hashed = BTreeMap::new();
    for path in inputs {
        let key = manifest_key(workdir, path);
        let internal = path.starts_with(workdir);
        if !path.is_file() {
            let hint = Stage::producer_of(&key)
                .map(|s| format!("; run the {s} stage first"))
                .unwrap_or_default();
            return Err(CliError::MissingArtifact(format!(
                "missing artifact {key}{hint}"
            )));
        }
        let current = hash_file(path)?;
        if internal {
            match manifest.recorded_output(&key) {
                None => {
                    let hint = Stage::producer_of(&key)
                        .map(|s| format!("; re-run the {s} stage"))
                        .unwrap_or_default();
                    return Err(CliError::MissingArtifact(format!(
                        "artifact {key} is not recorded in the manifest{hint}"
                    )));
                }
                Some(recorded) if recorded != current => {
                    let hint = Stage::producer_of(&key)
                        .map(|s| format!("; re-run the {s} stage"))
                        .unwrap_or_default();
                    return Err(CliError::MissingArtifact(format!(
                        "artifact {key} does not match the manifest (stale or modified){hint}"
                    )));
                }
                Some(_) => {}
            }
        }
        hashed.insert(key, current);
    }
    Ok(hashed)
}
