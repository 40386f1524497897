use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{dataset_for, Dataset};
use super::optimizer::OptimizerState;
use super::{TrainConfig, TrainError};
use crate::env::{detokenize, feature_bucket, sample_response, ReferringTask, TabularPolicy};
use crate::grpo::{objective_and_gradient, ResponseGroup};
use crate::provider::SegmentationProvider;
use crate::reward::{total_reward, RewardBreakdown, RewardError, Score};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key, hex.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainError> {
        let bad = || TrainError::Config(format!("malformed rng state {self:?}"));
        if self.seed.len() != 64 || !self.seed.is_ascii() {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Completed iterations.
    pub iteration: usize,
    pub config: TrainConfig,
    pub policy: TabularPolicy,
    pub reference: TabularPolicy,
    pub optimizer: OptimizerState,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(self).map_err(|e| TrainError::Numeric(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| TrainError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let c: Self = serde_json::from_str(&text)
            .map_err(|e| TrainError::Config(format!("{}: bad checkpoint: {e}", path.display())))?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(TrainError::Config(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                c.format_version
            )));
        }
        c.config.validate()?;
        Ok(c)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    /// 1-based index of the update this line describes.
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_accuracy_tier: f64,
    /// Mean IoU over responses whose answer parsed; absent if none did.
    pub mean_iou: Option<f64>,
    /// Fraction of responses earning both format rewards.
    pub compliance: f64,
    pub mean_length: f64,
    pub objective_value: f64,
    pub kl_mean: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub group_reward_sums: Vec<Score>,
    pub group_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

pub struct Trainer {
    cfg: TrainConfig,
    dataset: Dataset,
    policy: TabularPolicy,
    reference: TabularPolicy,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    iteration: usize,
    provider: Box<dyn SegmentationProvider>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let dataset = dataset_for(&cfg)?;
        Self::with_dataset(cfg, dataset)
    }

    /// A fresh run over an already built dataset.
    pub fn with_dataset(cfg: TrainConfig, dataset: Dataset) -> Result<Self, TrainError> {
        cfg.validate()?;
        if dataset.train.is_empty() {
            return Err(TrainError::Config("training split is empty".into()));
        }
        let provider = cfg.provider.build().map_err(|e| TrainError::Config(e.to_string()))?;
        let policy = TabularPolicy::with_layout_prior(&cfg.policy);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            optimizer: OptimizerState::new(&cfg.optimizer, policy.logits.len()),
            reference: policy.clone(),
            policy,
            rng,
            iteration: 0,
            provider,
            dataset,
            cfg,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        let dataset = dataset_for(&ckpt.config)?;
        let provider = ckpt
            .config
            .provider
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let n = ckpt.policy.logits.len();
        if ckpt.reference.logits.len() != n
            || (!ckpt.optimizer.m.is_empty() && ckpt.optimizer.m.len() != n)
            || ckpt.optimizer.m.len() != ckpt.optimizer.v.len()
        {
            return Err(TrainError::Config("checkpoint tables have inconsistent sizes".into()));
        }
        Ok(Self {
            rng: ckpt.rng.restore()?,
            cfg: ckpt.config,
            dataset,
            policy: ckpt.policy,
            reference: ckpt.reference,
            optimizer: ckpt.optimizer,
            iteration: ckpt.iteration,
            provider,
        })
    }

    /// Replaces the provider built from the config.
    pub fn with_provider(mut self, provider: Box<dyn SegmentationProvider>) -> Self {
        self.provider = provider;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    pub fn provider(&self) -> &dyn SegmentationProvider {
        self.provider.as_ref()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            config: self.cfg.clone(),
            policy: self.policy.clone(),
            reference: self.reference.clone(),
            optimizer: self.optimizer.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    fn score(&self, text: &str, task: &ReferringTask) -> Result<RewardBreakdown, TrainError> {
        let mut attempt = 0;
        loop {
            match total_reward(text, task, self.provider.as_ref(), &self.cfg.reward) {
                Ok(b) => return Ok(b),
                Err(RewardError::Provider { source, .. })
                    if source.is_retryable() && attempt < self.cfg.provider_retries =>
                {
                    attempt += 1;
                }
                Err(e @ (RewardError::Provider { .. } | RewardError::Mask { .. })) => {
                    return Err(TrainError::Provider(e.to_string()))
                }
                Err(e) => return Err(TrainError::Numeric(e.to_string())),
            }
        }
    }

    /// Samples, scores and optimizes one iteration. On error the trainer is
    /// left exactly as it was before the call.
    pub fn step(&mut self) -> Result<IterationMetrics, TrainError> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let vocab = cfg.policy.vocab;
        let end = vocab.end();
        let mut rng = self.rng.clone();
        let reference = if cfg.refresh_reference {
            self.policy.clone()
        } else {
            self.reference.clone()
        };

        let (good_think, good_seg) = (cfg.reward.think_format_value, cfg.reward.seg_format_value);
        let mut groups = Vec::with_capacity(cfg.questions_per_iteration);
        let mut sums = Vec::with_capacity(cfg.questions_per_iteration);
        let mut counts = Vec::with_capacity(cfg.questions_per_iteration);
        let (mut acc_sum, mut iou_sum, mut iou_n, mut compliant, mut len_sum) = (0i64, 0.0, 0usize, 0usize, 0usize);
        for _ in 0..cfg.questions_per_iteration {
            let task = &self.dataset.train[rng.gen_range(0..self.dataset.train.len())];
            let bucket = feature_bucket(task, cfg.policy.num_buckets);
            let mut samples = Vec::with_capacity(cfg.group_size);
            let mut rewards = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let s = sample_response(&self.policy, bucket, end, &mut rng, cfg.policy.max_len, cfg.temperature)?;
                let text = detokenize(&s.tokens, task.scene.width, task.scene.height, &vocab, &cfg.policy.flag);
                let b = self.score(&text, task)?;
                acc_sum += b.accuracy;
                if let Some(v) = b.achieved_iou {
                    iou_sum += v;
                    iou_n += 1;
                }
                compliant += usize::from(b.think_format == good_think && b.seg_format == good_seg);
                len_sum += s.tokens.len();
                rewards.push(b.total);
                samples.push(s);
            }
            sums.push(rewards.iter().sum::<Score>());
            counts.push(rewards.len());
            let mut g = ResponseGroup::new(task.id.clone(), samples, rewards.iter().map(|&r| r as f64).collect())?;
            g.compute_advantages(cfg.objective.advantage_std_floor)?;
            groups.push(g);
        }

        let mut policy = self.policy.clone();
        let mut optimizer = self.optimizer.clone();
        let (mut obj, mut kl, mut clip, mut gnorm) = (0.0, 0.0, 0.0, 0.0);
        for epoch in 0..cfg.inner_epochs {
            let report = objective_and_gradient(&groups, &policy, &reference, &cfg.objective)?;
            let bad = report.gradient.iter().filter(|g| !g.is_finite()).count();
            if bad > 0 || !report.objective_value.is_finite() {
                return Err(TrainError::Numeric(format!(
                    "iteration {} epoch {epoch}: {bad} non-finite gradient entries, objective {}, kl_mean {}",
                    self.iteration + 1,
                    report.objective_value,
                    report.kl_mean
                )));
            }
            obj += report.objective_value;
            kl += report.kl_mean;
            clip += report.clip_fraction;
            gnorm += report.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            optimizer.ascend(&cfg.optimizer, cfg.learning_rate, &mut policy.logits, &report.gradient);
        }
        if !policy.is_finite() {
            return Err(TrainError::Numeric(format!(
                "iteration {}: update produced non-finite logits",
                self.iteration + 1
            )));
        }

        let epochs = cfg.inner_epochs as f64;
        let n = counts.iter().sum::<usize>() as f64;
        let metrics = IterationMetrics {
            iteration: self.iteration + 1,
            mean_reward: sums.iter().sum::<Score>() as f64 / n,
            mean_accuracy_tier: acc_sum as f64 / n,
            mean_iou: (iou_n > 0).then(|| iou_sum / iou_n as f64),
            compliance: compliant as f64 / n,
            mean_length: len_sum as f64 / n,
            objective_value: obj / epochs,
            kl_mean: kl / epochs,
            clip_fraction: clip / epochs,
            grad_norm: gnorm / epochs,
            group_reward_sums: sums,
            group_counts: counts,
            wall_ms: cfg.log_wall_time.then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        self.policy = policy;
        self.optimizer = optimizer;
        self.reference = reference;
        self.rng = rng;
        self.iteration += 1;
        Ok(metrics)
    }

    /// Runs the remaining iterations in memory.
    pub fn run_in_memory(&mut self) -> Result<Vec<IterationMetrics>, TrainError> {
        let mut out = Vec::with_capacity(self.cfg.iterations.saturating_sub(self.iteration));
        while !self.is_done() {
            out.push(self.step()?);
        }
        Ok(out)
    }

    /// Runs the remaining iterations, appending to `out/metrics.jsonl` and
    /// writing checkpoints. On failure a checkpoint of the last completed
    /// iteration is flushed before the error is returned; numeric failures
    /// also leave a diagnostic file.
    pub fn run(&mut self, out: &Path) -> Result<PathBuf, TrainError> {
        fs::create_dir_all(out).map_err(|e| TrainError::io(out, e))?;
        let metrics_path = out.join(METRICS_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
            .map_err(|e| TrainError::io(&metrics_path, e))?;
        let final_path = out.join(FINAL_CHECKPOINT);
        while !self.is_done() {
            let m = match self.step() {
                Ok(m) => m,
                Err(e) => {
                    self.checkpoint().save(&final_path)?;
                    if let TrainError::Numeric(msg) = &e {
                        let diag = serde_json::json!({
                            "error": msg,
                            "iteration": self.iteration + 1,
                            "max_abs_logit": self.policy.logits.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                            "checkpoint": FINAL_CHECKPOINT,
                        });
                        let p = out.join(DIAGNOSTIC_FILE);
                        fs::write(&p, diag.to_string()).map_err(|e| TrainError::io(&p, e))?;
                    }
                    return Err(e);
                }
            };
            let line = serde_json::to_string(&m).map_err(|e| TrainError::Numeric(e.to_string()))?;
            writeln!(log, "{line}")
                .and_then(|_| log.flush())
                .map_err(|e| TrainError::io(&metrics_path, e))?;
            if self.cfg.checkpoint_every > 0 && self.iteration.is_multiple_of(self.cfg.checkpoint_every) {
                self.checkpoint()
                    .save(&out.join(format!("checkpoint_{:06}.json", self.iteration)))?;
            }
        }
        self.checkpoint().save(&final_path)?;
        Ok(final_path)
    }
}

/// Reads a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>, TrainError> {
    let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Config(format!("{}: {e}", path.display()))))
        .collect()
}
