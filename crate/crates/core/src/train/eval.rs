use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{load_split, Split};
use super::trainer::Checkpoint;
use super::TrainError;
use crate::env::{detokenize, feature_bucket, greedy_decode, PolicyConfig, ReferringTask, TabularPolicy};
use crate::mask::{ciou_aggregate, giou_aggregate, BitMask};
use crate::provider::{SceneRef, SegmentationProvider};
use crate::reward::{parse_answer_json, parse_response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_tasks: usize,
    pub giou: f64,
    pub ciou: f64,
    /// Fraction of responses with a well-formed think/answer layout.
    pub compliance: f64,
    /// Fraction of responses whose answer passed the schema check.
    pub parse_rate: f64,
}

/// Greedy-decodes every task; unparseable answers count as empty masks.
pub fn evaluate(
    policy: &TabularPolicy,
    pcfg: &PolicyConfig,
    tasks: &[ReferringTask],
    provider: &dyn SegmentationProvider,
) -> Result<EvalReport, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::Config("evaluation split is empty".into()));
    }
    let end = pcfg.vocab.end();
    let mut preds = Vec::with_capacity(tasks.len());
    let (mut well_formed, mut parsed) = (0usize, 0usize);
    for task in tasks {
        let (w, h) = (task.scene.width, task.scene.height);
        let tokens = greedy_decode(policy, feature_bucket(task, policy.num_buckets), end, pcfg.max_len);
        let text = detokenize(&tokens, w, h, &pcfg.vocab, &pcfg.flag);
        let p = parse_response(&text);
        well_formed += usize::from(p.well_formed);
        let answer = p.answer_text.as_deref().map(|a| parse_answer_json(a, w, h));
        let mask = match answer {
            Some(Ok(a)) => {
                parsed += 1;
                provider
                    .segment(
                        SceneRef {
                            id: &task.id,
                            scene: Some(&task.scene),
                        },
                        &a.prompt(),
                    )
                    .map_err(|e| TrainError::Provider(format!("task {}: {e}", task.id)))?
            }
            _ => BitMask::new(w, h).map_err(|e| TrainError::Config(e.to_string()))?,
        };
        preds.push(mask);
    }
    let pairs = || preds.iter().zip(tasks.iter().map(|t| &t.gt_mask));
    let giou = giou_aggregate(pairs()).map_err(|e| TrainError::Provider(e.to_string()))?;
    let ciou = ciou_aggregate(pairs()).map_err(|e| TrainError::Provider(e.to_string()))?;
    let n = tasks.len() as f64;
    Ok(EvalReport {
        num_tasks: tasks.len(),
        giou,
        ciou,
        compliance: well_formed as f64 / n,
        parse_rate: parsed as f64 / n,
    })
}

/// Evaluates a checkpoint's policy on one split of a dataset directory.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, dataset: &Path, split: Split) -> Result<EvalReport, TrainError> {
    let tasks = load_split(dataset, split)?;
    let provider = ckpt
        .config
        .provider
        .build()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    evaluate(&ckpt.policy, &ckpt.config.policy, &tasks, provider.as_ref())
}
