//! Ablation and stability studies built from ordinary training runs.
//!
//! Variants of a study differ from the base config only in the fields the
//! study names; everything else, seeds included, is shared.

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::trainer::{IterationMetrics, Trainer};
use super::{TrainConfig, TrainError};
use crate::grpo::Normalization;
use crate::reward::AccuracyMode;

/// Drop in mean reward between consecutive iterations, as a fraction of
/// the earlier value, above which an iteration is flagged.
pub const INSTABILITY_DROP: f64 = 0.5;

/// Iterations averaged for "final" statistics.
pub fn final_window(iterations: usize) -> usize {
    (iterations / 5).clamp(1, 50)
}

fn tail_mean(metrics: &[IterationMetrics], f: impl Fn(&IterationMetrics) -> f64) -> f64 {
    let w = final_window(metrics.len()).min(metrics.len());
    metrics[metrics.len() - w..].iter().map(f).sum::<f64>() / w as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Symmetric per-response baseline vs token-level normalization with
    /// asymmetric clipping.
    Components,
    /// Tiered accuracy reward vs single fixed thresholds.
    Thresholds,
}

impl std::str::FromStr for Study {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "components" => Ok(Study::Components),
            "thresholds" => Ok(Study::Thresholds),
            _ => Err(TrainError::Config(format!(
                "unknown study {s:?} (expected components or thresholds)"
            ))),
        }
    }
}

/// Named configs of a study, baseline first.
pub fn study_variants(study: Study, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    match study {
        Study::Components => {
            let mut baseline = base.clone();
            baseline.objective.normalization = Normalization::PerResponse;
            baseline.objective.eps_high = baseline.objective.eps_low;
            let mut full = base.clone();
            full.objective.normalization = Normalization::GlobalToken;
            if full.objective.eps_high <= full.objective.eps_low {
                full.objective.eps_high = full.objective.eps_low + 0.1;
            }
            vec![
                ("per_response_symmetric".into(), baseline),
                ("token_level_clip_higher".into(), full),
            ]
        }
        Study::Thresholds => {
            let mut out = vec![("tiered".to_string(), {
                let mut c = base.clone();
                c.reward.accuracy_mode = AccuracyMode::Tiered;
                c
            })];
            for t in [0.5, 0.7, 0.8] {
                let mut c = base.clone();
                c.reward.accuracy_mode = AccuracyMode::Fixed { threshold: t };
                out.push((format!("fixed_{t:.1}"), c));
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_mean_reward: f64,
    pub final_mean_accuracy_tier: f64,
    /// Window mean of training-time IoU over parsed answers (0 if none parsed).
    pub final_train_iou: f64,
    pub final_clip_fraction: f64,
    /// Greedy decoding on the held-out split; `giou` is its mean IoU.
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub per_seed: Vec<SeedResult>,
    pub mean_final_reward: f64,
    pub mean_eval_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub study: Study,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub inner_epochs: usize,
    pub variants: Vec<VariantSummary>,
}

/// Trains `cfg` with `seed` and summarizes the run.
pub fn run_seed(cfg: &TrainConfig, seed: u64) -> Result<(SeedResult, Vec<IterationMetrics>), TrainError> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let mut trainer = Trainer::new(cfg.clone())?;
    let metrics = trainer.run_in_memory()?;
    let eval = evaluate(
        trainer.policy(),
        &cfg.policy,
        &trainer.dataset().eval,
        trainer.provider(),
    )?;
    let result = SeedResult {
        seed,
        final_mean_reward: tail_mean(&metrics, |m| m.mean_reward),
        final_mean_accuracy_tier: tail_mean(&metrics, |m| m.mean_accuracy_tier),
        final_train_iou: tail_mean(&metrics, |m| m.mean_iou.unwrap_or(0.0)),
        final_clip_fraction: tail_mean(&metrics, |m| m.clip_fraction),
        eval,
    };
    Ok((result, metrics))
}

pub fn run_ablation(study: Study, base: &TrainConfig, seeds: &[u64]) -> Result<AblationReport, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("an ablation needs at least one seed".into()));
    }
    let mut variants = Vec::new();
    for (name, cfg) in study_variants(study, base) {
        let per_seed = seeds
            .iter()
            .map(|&s| run_seed(&cfg, s).map(|(r, _)| r))
            .collect::<Result<Vec<_>, _>>()?;
        let n = per_seed.len() as f64;
        variants.push(VariantSummary {
            mean_final_reward: per_seed.iter().map(|r| r.final_mean_reward).sum::<f64>() / n,
            mean_eval_iou: per_seed.iter().map(|r| r.eval.giou).sum::<f64>() / n,
            name,
            per_seed,
        });
    }
    Ok(AblationReport {
        study,
        seeds: seeds.to_vec(),
        iterations: base.iterations,
        inner_epochs: base.inner_epochs,
        variants,
    })
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Plain-text table, one row per variant and seed.
    pub fn render(&self) -> String {
        let mut s = format!(
            "study {:?}: {} iterations, {} inner epochs, seeds {:?}\n",
            self.study, self.iterations, self.inner_epochs, self.seeds
        );
        s.push_str("variant                   seed  final_reward  final_tier  train_iou  eval_giou  eval_ciou\n");
        for v in &self.variants {
            for r in &v.per_seed {
                s.push_str(&format!(
                    "{:<25} {:>4}  {:>12.4}  {:>10.4}  {:>9.4}  {:>9.4}  {:>9.4}\n",
                    v.name,
                    r.seed,
                    r.final_mean_reward,
                    r.final_mean_accuracy_tier,
                    r.final_train_iou,
                    r.eval.giou,
                    r.eval.ciou
                ));
            }
            s.push_str(&format!(
                "{:<25} mean  {:>12.4}  {:>10}  {:>9}  {:>9.4}\n",
                v.name, v.mean_final_reward, "", "", v.mean_eval_iou
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityEvent {
    pub iteration: usize,
    pub previous_reward: f64,
    pub reward: f64,
    pub drop_fraction: f64,
}

/// Iterations whose mean reward fell by more than [`INSTABILITY_DROP`]
/// relative to the previous iteration.
pub fn instability_events(metrics: &[IterationMetrics]) -> Vec<InstabilityEvent> {
    metrics
        .windows(2)
        .filter_map(|w| {
            let (prev, cur) = (w[0].mean_reward, w[1].mean_reward);
            if prev <= 0.0 {
                return None;
            }
            let drop = (prev - cur) / prev;
            (drop > INSTABILITY_DROP).then_some(InstabilityEvent {
                iteration: w[1].iteration,
                previous_reward: prev,
                reward: cur,
                drop_fraction: drop,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlTrace {
    pub iteration: usize,
    pub mean_reward: f64,
    pub kl_mean: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRun {
    pub beta: f64,
    pub seed: u64,
    pub final_mean_reward: f64,
    pub max_kl: f64,
    pub eval_giou: f64,
    pub instability: Vec<InstabilityEvent>,
    pub verdict: String,
    pub trace: Vec<KlTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlStudyReport {
    pub runs: Vec<KlRun>,
}

/// Trains with the KL penalty removed and, for contrast, with the base
/// `beta`, flagging large iteration-over-iteration reward drops.
pub fn kl_study(base: &TrainConfig, seed: u64) -> Result<KlStudyReport, TrainError> {
    let mut betas = vec![0.0];
    if base.objective.beta > 0.0 {
        betas.push(base.objective.beta);
    }
    let mut runs = Vec::new();
    for beta in betas {
        let mut cfg = base.clone();
        cfg.objective.beta = beta;
        let (r, metrics) = run_seed(&cfg, seed)?;
        let instability = instability_events(&metrics);
        let verdict = if instability.is_empty() {
            "no instability observed"
        } else {
            "instability observed"
        };
        runs.push(KlRun {
            beta,
            seed,
            final_mean_reward: r.final_mean_reward,
            max_kl: metrics.iter().map(|m| m.kl_mean).fold(0.0, f64::max),
            eval_giou: r.eval.giou,
            verdict: verdict.into(),
            instability,
            trace: metrics
                .iter()
                .map(|m| KlTrace {
                    iteration: m.iteration,
                    mean_reward: m.mean_reward,
                    kl_mean: m.kl_mean,
                    grad_norm: m.grad_norm,
                })
                .collect(),
        });
    }
    Ok(KlStudyReport { runs })
}

impl KlStudyReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            s.push_str(&format!(
                "beta {}: {} ({} flagged iterations), final reward {:.4}, max kl {:.4}, eval gIoU {:.4}\n",
                r.beta,
                r.verdict,
                r.instability.len(),
                r.final_mean_reward,
                r.max_kl,
                r.eval_giou
            ));
            for e in &r.instability {
                s.push_str(&format!(
                    "  iteration {}: reward {:.4} -> {:.4} ({:.0}% drop)\n",
                    e.iteration,
                    e.previous_reward,
                    e.reward,
                    100.0 * e.drop_fraction
                ));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(iteration: usize, mean_reward: f64) -> IterationMetrics {
        IterationMetrics {
            iteration,
            mean_reward,
            mean_accuracy_tier: 0.0,
            mean_iou: None,
            compliance: 0.0,
            mean_length: 0.0,
            objective_value: 0.0,
            kl_mean: 0.0,
            clip_fraction: 0.0,
            grad_norm: 0.0,
            group_reward_sums: vec![],
            group_counts: vec![],
            wall_ms: None,
        }
    }

    #[test]
    fn flags_drops_over_half() {
        let log = [m(1, 4.0), m(2, 2.0), m(3, 0.9), m(4, 0.0), m(5, 3.0)];
        let ev = instability_events(&log);
        assert_eq!(ev.iter().map(|e| e.iteration).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn variants_differ_only_in_objective_or_reward() {
        let base = TrainConfig::default();
        let strip = |c: &TrainConfig| {
            let mut v = serde_json::to_value(c).unwrap();
            v.as_object_mut().unwrap().remove("objective");
            v.as_object_mut().unwrap().remove("reward");
            v
        };
        for study in [Study::Components, Study::Thresholds] {
            for (_, c) in study_variants(study, &base) {
                assert_eq!(strip(&c), strip(&base));
                c.validate().unwrap();
            }
        }
    }
}
