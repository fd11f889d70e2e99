use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::DatasetConfig;
use super::HarnessError;
use crate::network::MlpConfig;
use crate::optim::{OptimizerConfig, Schedule};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: MlpConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: Schedule,
    pub dataset: DatasetConfig,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises to JSON");
        hex::encode(Sha256::digest(json))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported; expected {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        self.model
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.schedule.validate().map_err(HarnessError::Config)?;
        self.dataset.validate()?;
        let (dim, classes) = self.dataset.shape();
        if self.model.input_dim != dim || self.model.output_dim != classes {
            return bad(format!(
                "model maps {} -> {} but the dataset has {dim} inputs and {classes} classes",
                self.model.input_dim, self.model.output_dim
            ));
        }
        Ok(())
    }
}
