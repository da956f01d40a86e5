//! Provenance manifest written next to every stage's outputs.
//!
//! Inputs and outputs are recorded by file name and SHA-256 only, and the
//! manifest carries no timestamps, so identical runs produce identical bytes
//! regardless of where their files live.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{hash_file, write_json};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    /// Effective configuration, without input paths.
    pub config: serde_json::Value,
    /// Keyed by input role (`train`, `policy_new`, ...).
    pub inputs: BTreeMap<String, FileRecord>,
    /// Keyed by output file name.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Manifest {
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let record = FileRecord {
            file: file_name(path),
            sha256: hash_file(path)?,
        };
        self.inputs.insert(role.into(), record);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_name(path), hash_file(path)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join(FILE_NAME), self)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}
