//! Reinforcement-learned reasoning segmentation at desk scale: mask geometry,
//! rule-based rewards, segmentation providers, a GRPO-style optimizer, a toy
//! referring-segmentation environment with a tabular policy, and the training
//! loop that ties them together.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod grpo;
pub mod mask;
pub mod provider;
pub mod reward;
pub mod train;
