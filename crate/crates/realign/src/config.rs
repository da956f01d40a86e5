//! Pipeline configuration file.
//!
//! Every section is optional and falls back to its defaults. Input paths are
//! resolved relative to the directory containing the config file.

use std::path::{Path, PathBuf};

use realign_core::bench::BenchmarkSpec;
use realign_core::trainer::{ReferenceConfig, RunConfig};
use realign_core::Mode;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bench: BenchmarkSpec,
    pub reference: ReferenceConfig,
    pub run: RunConfig,
    pub mode: Mode,
    pub inputs: Inputs,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bench: BenchmarkSpec::default(),
            reference: ReferenceConfig::default(),
            run: RunConfig::default(),
            mode: Mode::Trace,
            inputs: Inputs::default(),
        }
    }
}

/// Paths to the artifacts a stage consumes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Training pairs (JSON Lines).
    pub train: Option<PathBuf>,
    /// Held-out pairs (JSON Lines).
    pub test: Option<PathBuf>,
    pub policy_old: Option<PathBuf>,
    pub policy_new: Option<PathBuf>,
    /// Vocabulary and templates; the built-in vocabulary when absent.
    pub vocab: Option<PathBuf>,
    /// Frozen reference model; aligned from `train` when absent.
    pub reference: Option<PathBuf>,
    /// Model to evaluate.
    pub checkpoint: Option<PathBuf>,
    /// Evaluation report of a second run to compare against.
    pub compare_report: Option<PathBuf>,
}

impl Inputs {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.train,
            &mut self.test,
            &mut self.policy_old,
            &mut self.policy_new,
            &mut self.vocab,
            &mut self.reference,
            &mut self.checkpoint,
            &mut self.compare_report,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn require<'a>(field: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path> {
        field.as_deref().ok_or(CliError::MissingInput(name))
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let mut cfg: PipelineConfig = crate::io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.inputs.resolve(base);
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"run": {"hyper": {"beta": 0.5}}, "inputs": {"train": "d/train.jsonl"}}"#).unwrap();
        let cfg = PipelineConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.run.hyper.beta, 0.5);
        assert_eq!(cfg.run.hyper.t_max, RunConfig::default().hyper.t_max);
        assert_eq!(cfg.inputs.train.unwrap(), dir.path().join("d/train.jsonl"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"inptus": {}}"#).unwrap();
        assert!(PipelineConfig::load(Some(&path)).is_err());
    }
}
