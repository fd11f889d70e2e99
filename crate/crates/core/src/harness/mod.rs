//! Experiment harness: IDX/MNIST and synthetic data, TOML run configs, the
//! training loop, ablation and learning-rate grid runners, checkpoints and
//! metric files.

mod checkpoint;
mod config;
mod data;
mod gradcheck;
mod idx;
mod metrics;
mod runner;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{TrainConfig, SCHEMA_VERSION};
pub use data::{
    make_blobs, Dataset, DatasetConfig, MnistSubset, Splits, SyntheticBlobs, BLOB_SCALE,
    MNIST_FILES, VALIDATION_FRACTION,
};
pub use gradcheck::{check_planted_bug, check_random_mlps, GradCheckSpec, GradCheckSummary};
pub use idx::{load_idx_images, load_idx_labels, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};
pub use metrics::{
    write_ablation_csv, write_grid_csv, write_run, EVALUATIONS_FILE, METRICS_FILE, RECORD_FILE,
};
pub use runner::{
    run_ablation, run_grid, AblationCell, AblationResult, AblationRow, GridCell, GridResult, Spread,
};
pub use train::{
    train, train_with_data, EvalRow, RunRecord, RunStatus, StepRow, Summary, Trained,
    DIVERGENCE_LOSS,
};

use thiserror::Error;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "NERO_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 numerical, 4 data or format.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Data(_) | HarnessError::Io(_) => 4,
        }
    }
}
