//! Training loop, evaluation, datasets, checkpoints and experiment drivers.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod experiments;
pub mod optimizer;
pub mod trainer;

use std::path::{Path, PathBuf};

pub use config::{OptimizerConfig, OptimizerKind, TrainConfig};
pub use dataset::{build_dataset, gen_dataset, load_dataset, load_split, Dataset, Manifest, Split};
pub use eval::{evaluate, evaluate_checkpoint, EvalReport};
pub use optimizer::OptimizerState;
pub use trainer::{read_metrics, Checkpoint, IterationMetrics, Trainer};

use crate::env::EnvError;
use crate::grpo::GrpoError;
use crate::reward::{total_reward, RewardBreakdown};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("dataset manifest error at {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl TrainError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Config(_) => 2,
            TrainError::Io { .. } | TrainError::Manifest { .. } => 3,
            TrainError::Provider(_) => 4,
            TrainError::Numeric(_) => 5,
        }
    }
}

impl From<EnvError> for TrainError {
    fn from(e: EnvError) -> Self {
        TrainError::Config(e.to_string())
    }
}

impl From<GrpoError> for TrainError {
    fn from(e: GrpoError) -> Self {
        match e {
            GrpoError::Numeric(m) => TrainError::Numeric(m),
            other => TrainError::Numeric(other.to_string()),
        }
    }
}

/// Scores a response file against a task file under `cfg`'s reward and
/// provider settings.
pub fn reward_check(response: &Path, task: &Path, cfg: &TrainConfig) -> Result<RewardBreakdown, TrainError> {
    let text = std::fs::read_to_string(response).map_err(|e| TrainError::io(response, e))?;
    let task = dataset::load_task(task)?;
    let provider = cfg.provider.build().map_err(|e| TrainError::Config(e.to_string()))?;
    total_reward(&text, &task, provider.as_ref(), &cfg.reward).map_err(|e| TrainError::Provider(e.to_string()))
}
