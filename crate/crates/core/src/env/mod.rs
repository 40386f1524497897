//! Synthetic referring-segmentation scenes, the token vocabulary, the tabular
//! policy and its text rendering.

pub mod policy;
pub mod scene;
pub mod task;
pub mod text;
pub mod vocab;

pub use policy::{feature_bucket, greedy_decode, sample_response, PolicyConfig, TabularPolicy};
pub use scene::{generate_scene, Scene, SceneConfig, SceneObject, Shape};
pub use task::{make_task, Expression, ReferringTask};
pub use text::{detokenize, tokenize_response};
pub use vocab::{Token, TokenVocab};

use crate::mask::MaskError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene seed {seed}: could not place object {object}")]
    Placement { seed: u64, object: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("scene seed {seed}: no unambiguous expression")]
    NoExpression { seed: u64 },
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}
