use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::Trained;
use super::HarnessError;
use crate::network::{MlpConfig, Model, StoredGroup};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerState};

/// Model parameters plus optimiser state, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub model: MlpConfig,
    pub groups: Vec<StoredGroup>,
    pub optimizer: OptimizerConfig,
    pub optimizer_state: OptimizerState,
    /// The run that produced the checkpoint, when there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        optimizer: &Optimizer,
        step: usize,
        train: Option<TrainConfig>,
    ) -> Self {
        Self {
            step,
            model: model.config.clone(),
            groups: model.to_stored(),
            optimizer: optimizer.config().clone(),
            optimizer_state: optimizer.state(),
            train,
        }
    }

    pub fn from_trained(t: &Trained) -> Self {
        Self::new(
            &t.model,
            &t.optimizer,
            t.record.summary.steps,
            Some(t.record.config.clone()),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_vec_pretty(self).expect("checkpoint serialises");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(path)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
    }

    pub fn to_model(&self) -> Result<Model, HarnessError> {
        Model::from_stored(self.model.clone(), self.groups.clone())
            .map_err(|e| HarnessError::Data(e.to_string()))
    }

    pub fn to_optimizer(&self) -> Result<Optimizer, HarnessError> {
        Optimizer::from_state(&self.optimizer, self.optimizer_state.clone())
            .map_err(|e| HarnessError::Data(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::train::{tests::blobs_config, train};

    #[test]
    fn round_trips_and_resumes_identically() {
        let t = train(&blobs_config(1), Path::new(".")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let ck = Checkpoint::from_trained(&t);
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap().to_stored(), t.model.to_stored());

        let mut a = t.model.clone();
        let mut b = back.to_model().unwrap();
        let mut oa = t.optimizer.clone();
        let mut ob = back.to_optimizer().unwrap();
        let x = crate::tensor::Tensor::from_rows(&[&[3.0, 0.1], &[0.0, 2.9]]);
        for (m, o) in [(&mut a, &mut oa), (&mut b, &mut ob)] {
            m.loss_and_grad(&x, &[0, 1]).unwrap();
            o.step(&mut m.groups, 1.0).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn garbage_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        std::fs::write(&p, b"{").unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap_err().exit_code(), 4);
    }
}
