//! Group-relative policy optimization objective.
//!
//! For each question a group of `G` responses is sampled from the old policy
//! and scored. Rewards are normalized within the group to advantages
//! `A_i = (r_i - mean) / std`. Every token of response `i` then contributes
//!
//! ```text
//! min(ratio * A_i, clip(ratio, 1 - eps_low, 1 + eps_high) * A_i) - beta * k3(ratio_ref)
//! ```
//!
//! where `ratio = pi_theta / pi_old` for that token and
//! `k3 = u - ln u - 1` with `u = pi_ref / pi_theta`. Token terms are combined
//! either per response (`1/G * sum_i 1/|o_i| * sum_t`) or globally per group
//! (`1/sum_i |o_i| * sum_i sum_t`). The objective is maximized.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("{0}")]
    Domain(String),
    #[error("group {0} has no advantages; call compute_advantages first")]
    MissingAdvantages(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("policy error: {0}")]
    Policy(String),
}

/// The log-probability contract the objective needs from a policy.
///
/// `context` is an opaque conditioning index chosen by the policy (the toy
/// policy uses its feature bucket).
pub trait LogProbPolicy {
    /// Length of the flat parameter vector gradients are reported against.
    fn num_params(&self) -> usize;

    /// Per-token log-probabilities of `tokens`.
    fn token_log_probs(&self, context: usize, tokens: &[u32]) -> Result<Vec<f64>, GrpoError>;

    /// Adds `sum_t weights[t] * grad log p(tokens[t])` into `out`.
    fn accumulate_log_prob_grad(
        &self,
        context: usize,
        tokens: &[u32],
        weights: &[f64],
        out: &mut [f64],
    ) -> Result<(), GrpoError>;
}

/// One sampled response with the sampling policy's per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub tokens: Vec<u32>,
    pub old_logprobs: Vec<f64>,
    pub context: usize,
}

impl ResponseSample {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.tokens.is_empty() {
            return Err(GrpoError::Domain("response has no tokens".into()));
        }
        if self.tokens.len() != self.old_logprobs.len() {
            return Err(GrpoError::Domain(format!(
                "{} tokens but {} old log-probabilities",
                self.tokens.len(),
                self.old_logprobs.len()
            )));
        }
        if let Some(lp) = self.old_logprobs.iter().find(|lp| !(**lp <= 0.0)) {
            return Err(GrpoError::Domain(format!("old log-probability {lp} is not <= 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGroup {
    pub question_id: String,
    pub samples: Vec<ResponseSample>,
    pub rewards: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
}

impl ResponseGroup {
    pub fn new(
        question_id: impl Into<String>,
        samples: Vec<ResponseSample>,
        rewards: Vec<f64>,
    ) -> Result<Self, GrpoError> {
        if samples.len() < 2 || samples.len() != rewards.len() {
            return Err(GrpoError::Domain(format!(
                "group needs G >= 2 samples with one reward each (got {} samples, {} rewards)",
                samples.len(),
                rewards.len()
            )));
        }
        for s in &samples {
            s.validate()?;
        }
        Ok(Self {
            question_id: question_id.into(),
            samples,
            rewards,
            advantages: None,
        })
    }

    pub fn compute_advantages(&mut self, std_floor: f64) -> Result<&[f64], GrpoError> {
        let adv = compute_advantages(&self.rewards, std_floor)?;
        Ok(self.advantages.insert(adv))
    }

    pub fn total_tokens(&self) -> usize {
        self.samples.iter().map(|s| s.tokens.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Mean over tokens within a response, then over responses.
    PerResponse,
    /// Sum over all tokens of the group divided by its total token count.
    #[default]
    GlobalToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub normalization: Normalization,
    pub advantage_std_floor: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.3,
            beta: 0.04,
            normalization: Normalization::GlobalToken,
            advantage_std_floor: 1e-8,
        }
    }
}

impl ObjectiveConfig {
    /// Symmetric clipping with per-response averaging.
    pub fn symmetric_per_response(eps: f64, beta: f64) -> Self {
        Self {
            eps_low: eps,
            eps_high: eps,
            beta,
            normalization: Normalization::PerResponse,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) {
            return Err(GrpoError::Domain(format!("eps_low {} not in (0,1)", self.eps_low)));
        }
        if !(self.eps_high >= self.eps_low) || !self.eps_high.is_finite() {
            return Err(GrpoError::Domain(format!(
                "eps_high {} must be finite and >= eps_low {}",
                self.eps_high, self.eps_low
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(GrpoError::Domain(format!("beta {} must be >= 0", self.beta)));
        }
        if !(self.advantage_std_floor >= 0.0) {
            return Err(GrpoError::Domain("advantage_std_floor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub objective_value: f64,
    pub kl_mean: f64,
    pub clip_fraction: f64,
    pub gradient: Vec<f64>,
}

/// Group-normalized advantages with the population standard deviation.
/// Groups whose spread is below `std_floor` get all-zero advantages.
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::Domain(format!(
            "advantages need a group of at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(GrpoError::Domain(format!("non-finite reward {r}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor || std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `u - ln u - 1` with `u = exp(logp_ref - logp_theta)`.
pub fn kl_term(logp_theta: f64, logp_ref: f64) -> Result<f64, GrpoError> {
    if !logp_theta.is_finite() || !logp_ref.is_finite() {
        return Err(GrpoError::Domain(format!(
            "kl_term needs finite log-probabilities, got {logp_theta} and {logp_ref}"
        )));
    }
    let d = logp_ref - logp_theta;
    // expm1(d) >= d holds exactly in floating point, so the result is never negative.
    Ok(d.exp_m1() - d)
}

/// Clipped surrogate of one token. The flag is set when the clamped branch
/// is strictly the minimum, i.e. the token carries no surrogate gradient.
pub fn surrogate_token(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high) * advantage;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

/// Objective value, diagnostics, and its gradient with respect to the policy
/// parameters. Advantages, old log-probabilities and the reference policy
/// are constants.
pub fn objective_and_gradient<P: LogProbPolicy>(
    groups: &[ResponseGroup],
    policy: &P,
    reference: &P,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveReport, GrpoError> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(GrpoError::Domain("objective over zero groups".into()));
    }
    let mut gradient = vec![0.0; policy.num_params()];
    let mut objective = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped_tokens = 0usize;
    let mut token_count = 0usize;
    let group_weight = 1.0 / groups.len() as f64;

    for group in groups {
        let advantages = group
            .advantages
            .as_ref()
            .ok_or_else(|| GrpoError::MissingAdvantages(group.question_id.clone()))?;
        if advantages.len() != group.samples.len() {
            return Err(GrpoError::Domain(format!(
                "group {}: {} advantages for {} samples",
                group.question_id,
                advantages.len(),
                group.samples.len()
            )));
        }
        let g = group.samples.len() as f64;
        let total_tokens = group.total_tokens() as f64;
        let mut group_value = 0.0;

        for (sample, &adv) in group.samples.iter().zip(advantages) {
            sample.validate()?;
            let token_weight = match cfg.normalization {
                Normalization::PerResponse => 1.0 / (g * sample.tokens.len() as f64),
                Normalization::GlobalToken => 1.0 / total_tokens,
            };
            let logp = policy.token_log_probs(sample.context, &sample.tokens)?;
            let logp_ref = reference.token_log_probs(sample.context, &sample.tokens)?;
            let mut coeffs = Vec::with_capacity(sample.tokens.len());

            for t in 0..sample.tokens.len() {
                let ratio = (logp[t] - sample.old_logprobs[t]).exp();
                if !(ratio > 0.0) || !ratio.is_finite() {
                    return Err(GrpoError::Numeric(format!(
                        "importance ratio {ratio} at token {t} of group {}",
                        group.question_id
                    )));
                }
                let (surrogate, clipped) = surrogate_token(ratio, adv, cfg.eps_low, cfg.eps_high);
                let kl = kl_term(logp[t], logp_ref[t])?;
                let u = (logp_ref[t] - logp[t]).exp();

                group_value += token_weight * (surrogate - cfg.beta * kl);
                kl_sum += kl;
                token_count += 1;
                if clipped {
                    clipped_tokens += 1;
                }

                // d/dlogp of ratio * A is ratio * A; the clamped branch is constant.
                let d_surrogate = if clipped { 0.0 } else { ratio * adv };
                let d_kl = 1.0 - u;
                coeffs.push(group_weight * token_weight * (d_surrogate - cfg.beta * d_kl));
            }
            policy.accumulate_log_prob_grad(sample.context, &sample.tokens, &coeffs, &mut gradient)?;
        }
        objective += group_weight * group_value;
    }

    Ok(ObjectiveReport {
        objective_value: objective,
        kl_mean: kl_sum / token_count as f64,
        clip_fraction: clipped_tokens as f64 / token_count as f64,
        gradient,
    })
}
