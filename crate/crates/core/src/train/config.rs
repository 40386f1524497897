use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::env::{PolicyConfig, SceneConfig};
use crate::grpo::ObjectiveConfig;
use crate::provider::ProviderDescriptor;
use crate::reward::RewardConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient ascent `theta += lr * grad`.
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Every knob of a training run. Serialized as the single JSON config
/// document the CLI reads; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub questions_per_iteration: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Learning rate of the full-scale vision-language setting; recorded, never used.
    pub reference_learning_rate: f64,
    pub temperature: f64,
    /// Gradient steps per sampled batch.
    pub inner_epochs: usize,
    /// Replace the reference policy with the sampling policy every iteration.
    pub refresh_reference: bool,
    pub optimizer: OptimizerConfig,
    pub objective: ObjectiveConfig,
    pub reward: RewardConfig,
    pub provider: ProviderDescriptor,
    /// Retries of a retryable provider failure before the run aborts.
    pub provider_retries: u32,
    pub dataset_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub scene: SceneConfig,
    pub policy: PolicyConfig,
    /// Read tasks from this directory instead of generating them from `seed`.
    pub dataset_dir: Option<PathBuf>,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Add `wall_ms` to metrics; breaks byte-identical logs.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            questions_per_iteration: 4,
            iterations: 500,
            learning_rate: 0.05,
            reference_learning_rate: 1.0e-6,
            temperature: 1.0,
            inner_epochs: 1,
            refresh_reference: false,
            optimizer: OptimizerConfig::default(),
            objective: ObjectiveConfig::default(),
            reward: RewardConfig::default(),
            provider: ProviderDescriptor::default(),
            provider_retries: 2,
            dataset_size: 3000,
            train_fraction: 0.9,
            seed: 0,
            scene: SceneConfig::default(),
            policy: PolicyConfig::default(),
            dataset_dir: None,
            checkpoint_every: 0,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.group_size < 2 {
            return bad(format!("group_size {} must be >= 2", self.group_size));
        }
        if self.questions_per_iteration == 0 {
            return bad("questions_per_iteration must be >= 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("optimizer betas must lie in [0, 1) and eps must be > 0".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} must lie in (0, 1)", self.train_fraction));
        }
        if self.dataset_dir.is_none() {
            let (train, eval) = split_sizes(self.dataset_size, self.train_fraction);
            if train == 0 || eval == 0 {
                return bad(format!(
                    "dataset_size {} leaves an empty train or eval split",
                    self.dataset_size
                ));
            }
        }
        self.objective
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.reward.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.provider
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.scene.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.policy.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let v = self.policy.vocab;
        if v.bins > self.scene.width.min(self.scene.height) {
            return bad("vocab.bins must not exceed the scene side".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Train and eval counts for `n` tasks.
pub fn split_sizes(n: usize, train_fraction: f64) -> (usize, usize) {
    let train = ((n as f64 * train_fraction).round() as usize).min(n);
    (train, n - train)
}
