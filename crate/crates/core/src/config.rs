//! Experiment configuration: a single JSON file drives dataset synthesis,
//! training and evaluation. Unknown keys are rejected so typos fail fast;
//! CLI flags override individual fields after loading.

use crate::data::SynthConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Network shape; required by `train`.
    pub model: Option<ModelConfig>,
    /// Training loop knobs; defaults apply field-wise.
    pub train: TrainConfig,
    /// Synthetic-data parameters; required by `synth`.
    pub synth: Option<SynthConfig>,
    /// Dataset manifest path, relative to the config file's directory.
    pub dataset: Option<PathBuf>,
    /// Output directory; the CLI `--out` flag overrides it.
    pub out_dir: Option<PathBuf>,
    /// Top-K grid for evaluation; defaults to {1, 50, 100, …, 500} clipped
    /// to the database size.
    pub eval_k_grid: Option<Vec<usize>>,
}

impl ExperimentConfig {
    /// Loads and validates a config file. Relative `dataset` paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        if let Some(ds) = &cfg.dataset {
            if ds.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.dataset = Some(base.join(ds));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if let Some(grid) = &self.eval_k_grid {
            if grid.is_empty() || grid.contains(&0) {
                return Err(Error::Config(
                    "eval_k_grid must be non-empty with K >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Canonical JSON used for hashing into run metadata.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn load_rejects_unknown_keys() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"trian": {}}"#).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert_eq!(err.category(), crate::ErrorCategory::Config);
    }

    #[test]
    fn load_applies_defaults_and_resolves_paths() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"dataset": "data/manifest.json", "train": {"seed": 9}}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.batch_size, 64);
        assert!(cfg.dataset.unwrap().starts_with(dir.path()));
    }

    #[test]
    fn invalid_nested_values_are_config_errors() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"train": {"lr0": -1.0}}"#).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert_eq!(err.category(), crate::ErrorCategory::Config);
    }
}
