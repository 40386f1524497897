use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::ReferringTask;
use super::vocab::TokenVocab;
use super::EnvError;
use crate::grpo::{GrpoError, LogProbPolicy, ResponseSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub num_buckets: usize,
    pub max_len: usize,
    pub vocab: TokenVocab,
    /// Per-position probability the initial policy assigns to the token class
    /// of the canonical response layout; 0 gives uniform logits.
    pub prior_compliance: f64,
    /// Flag string written into rendered answers.
    pub flag: String,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            num_buckets: 8,
            max_len: 24,
            vocab: TokenVocab::default(),
            prior_compliance: 0.9,
            flag: "target".into(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.into()));
        if self.num_buckets == 0 {
            return bad("num_buckets must be >= 1");
        }
        if self.max_len < 1 {
            return bad("max_len must be >= 1");
        }
        if self.vocab.bins < 1 {
            return bad("vocab.bins must be >= 1");
        }
        if !(0.0..1.0).contains(&self.prior_compliance) {
            return bad("prior_compliance must lie in [0, 1)");
        }
        if self.flag.trim().is_empty() || self.flag.chars().count() > 64 || self.flag.contains(['"', '\\']) {
            return bad("flag must be 1..=64 characters without quotes or backslashes");
        }
        Ok(())
    }
}

/// Coarse location of the target: quadrant of its box center, `qx + 2 * qy`.
pub fn target_quadrant(task: &ReferringTask) -> usize {
    let b = task.target().bbox;
    let qx = usize::from(b.x1 + b.x2 >= task.scene.width);
    let qy = usize::from(b.y1 + b.y2 >= task.scene.height);
    qx + 2 * qy
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Conditioning bucket of a task: a hash of (expression, target attribute)
/// combined with the target quadrant so that, whenever `num_buckets` is a
/// multiple of four, `bucket % 4` equals the quadrant.
pub fn feature_bucket(task: &ReferringTask, num_buckets: usize) -> usize {
    let code = task.expression_id.to_string();
    let mix = fnv1a(code.bytes().chain([0xff, task.target().attribute_id]));
    let nb = num_buckets as u64;
    ((target_quadrant(task) as u64 + 4 * (mix % nb)) % nb) as usize
}

/// Tabular softmax policy: one logits row per (bucket, position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub num_buckets: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub logits: Vec<f64>,
}

fn log_softmax_into(row: &[f64], scale: f64, out: &mut Vec<f64>) {
    out.clear();
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
    let lse = max + row.iter().map(|&v| (v * scale - max).exp()).sum::<f64>().ln();
    out.extend(row.iter().map(|&v| v * scale - lse));
}

/// A row of the sparse gradient of `sum_t log p(token_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient {
    pub bucket: usize,
    pub position: usize,
    pub values: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(num_buckets: usize, max_len: usize, vocab_size: usize) -> Self {
        Self {
            num_buckets,
            max_len,
            vocab_size,
            logits: vec![0.0; num_buckets * max_len * vocab_size],
        }
    }

    /// Initial policy biased toward the canonical layout
    /// `<think> filler </think> <answer> 4 bins, 2 bins, label </answer> END`.
    pub fn with_layout_prior(cfg: &PolicyConfig) -> Self {
        let v = cfg.vocab;
        let mut p = Self::uniform(cfg.num_buckets, cfg.max_len, v.size());
        if cfg.prior_compliance <= 0.0 {
            return p;
        }
        let bins: Vec<u32> = (0..v.bins).map(|b| v.bin(b)).collect();
        let fillers: Vec<u32> = (0..v.fillers).map(|k| v.filler(k)).collect();
        let labels = vec![
            v.label(crate::mask::PointLabel::Negative),
            v.label(crate::mask::PointLabel::Positive),
        ];
        let mut layout: Vec<Vec<u32>> = vec![
            vec![TokenVocab::THINK_OPEN],
            fillers,
            vec![TokenVocab::THINK_CLOSE],
            vec![TokenVocab::ANSWER_OPEN],
        ];
        layout.extend(std::iter::repeat_n(bins, 6));
        layout.insert(10, labels);
        layout.push(vec![TokenVocab::ANSWER_CLOSE]);
        let vocab_size = v.size() as f64;
        let q = cfg.prior_compliance;
        for bucket in 0..cfg.num_buckets {
            for pos in 0..cfg.max_len {
                let class = layout.get(pos).cloned().unwrap_or_else(|| vec![v.end()]);
                if class.is_empty() {
                    continue;
                }
                let n_in = class.len() as f64;
                let boost = (q / (1.0 - q) * (vocab_size - n_in) / n_in).ln();
                let row = p.row_mut(bucket, pos);
                for &tok in &class {
                    row[tok as usize] = boost;
                }
            }
        }
        p
    }

    fn offset(&self, bucket: usize, position: usize) -> usize {
        (bucket * self.max_len + position) * self.vocab_size
    }

    pub fn row(&self, bucket: usize, position: usize) -> &[f64] {
        let o = self.offset(bucket, position);
        &self.logits[o..o + self.vocab_size]
    }

    pub fn row_mut(&mut self, bucket: usize, position: usize) -> &mut [f64] {
        let o = self.offset(bucket, position);
        &mut self.logits[o..o + self.vocab_size]
    }

    fn check(&self, bucket: usize, tokens: &[u32]) -> Result<(), EnvError> {
        if bucket >= self.num_buckets {
            return Err(EnvError::Domain(format!(
                "bucket {bucket} out of range (num_buckets {})",
                self.num_buckets
            )));
        }
        if tokens.len() > self.max_len {
            return Err(EnvError::Domain(format!(
                "{} tokens exceed max_len {}",
                tokens.len(),
                self.max_len
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(EnvError::Domain(format!(
                "token id {t} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Log-softmax distribution at one position.
    pub fn log_distribution(&self, bucket: usize, position: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.vocab_size);
        log_softmax_into(self.row(bucket, position), 1.0, &mut out);
        out
    }

    pub fn log_prob(&self, bucket: usize, tokens: &[u32]) -> Result<Vec<f64>, EnvError> {
        self.check(bucket, tokens)?;
        let mut buf = Vec::with_capacity(self.vocab_size);
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                log_softmax_into(self.row(bucket, t), 1.0, &mut buf);
                buf[tok as usize]
            })
            .collect())
    }

    /// Gradient of `sum_t log p(token_t)` restricted to the visited rows.
    pub fn grad_log_prob(&self, bucket: usize, tokens: &[u32]) -> Result<Vec<RowGradient>, EnvError> {
        self.check(bucket, tokens)?;
        let mut buf = Vec::with_capacity(self.vocab_size);
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                log_softmax_into(self.row(bucket, t), 1.0, &mut buf);
                let mut values: Vec<f64> = buf.iter().map(|lp| -lp.exp()).collect();
                values[tok as usize] += 1.0;
                RowGradient {
                    bucket,
                    position: t,
                    values,
                }
            })
            .collect())
    }

    /// Dense form of a sparse gradient, aligned with `logits`.
    pub fn densify(&self, rows: &[RowGradient]) -> Vec<f64> {
        let mut out = vec![0.0; self.logits.len()];
        for r in rows {
            let o = self.offset(r.bucket, r.position);
            for (dst, v) in out[o..o + self.vocab_size].iter_mut().zip(&r.values) {
                *dst += v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().all(|v| v.is_finite())
    }
}

impl LogProbPolicy for TabularPolicy {
    fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn token_log_probs(&self, context: usize, tokens: &[u32]) -> Result<Vec<f64>, GrpoError> {
        self.log_prob(context, tokens)
            .map_err(|e| GrpoError::Policy(e.to_string()))
    }

    fn accumulate_log_prob_grad(
        &self,
        context: usize,
        tokens: &[u32],
        weights: &[f64],
        out: &mut [f64],
    ) -> Result<(), GrpoError> {
        self.check(context, tokens)
            .map_err(|e| GrpoError::Policy(e.to_string()))?;
        let mut buf = Vec::with_capacity(self.vocab_size);
        for (t, (&tok, &w)) in tokens.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            log_softmax_into(self.row(context, t), 1.0, &mut buf);
            let o = self.offset(context, t);
            for (k, lp) in buf.iter().enumerate() {
                out[o + k] -= w * lp.exp();
            }
            out[o + tok as usize] += w;
        }
        Ok(())
    }
}

/// Samples a response autoregressively until END or `max_len`.
///
/// Tokens are drawn from `softmax(logits / temperature)`; the recorded
/// `old_logprobs` are the policy's own (untempered) log-probabilities so that
/// importance ratios are exactly 1 at the sampling parameters.
pub fn sample_response<R: Rng + ?Sized>(
    params: &TabularPolicy,
    bucket: usize,
    end_token: u32,
    rng: &mut R,
    max_len: usize,
    temperature: f64,
) -> Result<ResponseSample, EnvError> {
    if !(temperature > 0.0) {
        return Err(EnvError::Domain(format!("temperature {temperature} must be > 0")));
    }
    params.check(bucket, &[])?;
    let max_len = max_len.min(params.max_len);
    let mut tokens = Vec::with_capacity(max_len);
    let mut old_logprobs = Vec::with_capacity(max_len);
    let mut tempered = Vec::with_capacity(params.vocab_size);
    let mut plain = Vec::with_capacity(params.vocab_size);
    for t in 0..max_len {
        let row = params.row(bucket, t);
        log_softmax_into(row, 1.0 / temperature, &mut tempered);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut choice = tempered.len() - 1;
        for (k, lp) in tempered.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                choice = k;
                break;
            }
        }
        log_softmax_into(row, 1.0, &mut plain);
        tokens.push(choice as u32);
        old_logprobs.push(plain[choice]);
        if choice as u32 == end_token {
            break;
        }
    }
    Ok(ResponseSample {
        tokens,
        old_logprobs,
        context: bucket,
    })
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy_decode(params: &TabularPolicy, bucket: usize, end_token: u32, max_len: usize) -> Vec<u32> {
    let mut tokens = Vec::new();
    for t in 0..max_len.min(params.max_len) {
        let row = params.row(bucket, t);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        tokens.push(best as u32);
        if best as u32 == end_token {
            break;
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scene::{generate_scene, SceneConfig};
    use crate::env::task::make_task;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_policy(seed: u64, buckets: usize, len: usize, vocab: usize) -> TabularPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = TabularPolicy::uniform(buckets, len, vocab);
        for v in &mut p.logits {
            *v = rng.gen_range(-2.0..2.0);
        }
        p
    }

    #[test]
    fn uniform_log_probs() {
        let p = TabularPolicy::uniform(2, 5, 27);
        for lp in p.log_prob(1, &[0, 5, 26]).unwrap() {
            assert!((lp + (27f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_normalize_and_gradient_rows_sum_to_zero() {
        let p = random_policy(1, 3, 6, 11);
        for b in 0..3 {
            for t in 0..6 {
                let s: f64 = p.log_distribution(b, t).iter().map(|l| l.exp()).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        for row in p.grad_log_prob(2, &[3, 3, 10, 0]).unwrap() {
            assert!(row.values.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn grad_log_prob_matches_finite_differences() {
        let p = random_policy(2, 2, 5, 7);
        let tokens = [1u32, 6, 0, 3];
        let dense = p.densify(&p.grad_log_prob(1, &tokens).unwrap());
        let f = |q: &TabularPolicy| q.log_prob(1, &tokens).unwrap().iter().sum::<f64>();
        let h = 1e-6;
        for (i, &analytic) in dense.iter().enumerate() {
            let mut plus = p.clone();
            plus.logits[i] += h;
            let mut minus = p.clone();
            minus.logits[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let err = (fd - analytic).abs() / analytic.abs().max(1e-3);
            assert!(err < 1e-6, "param {i}: analytic {analytic} fd {fd}");
        }
    }

    #[test]
    fn unvisited_rows_have_zero_gradient() {
        let p = random_policy(3, 2, 6, 5);
        let dense = p.densify(&p.grad_log_prob(0, &[1, 2]).unwrap());
        let visited = 2 * 5;
        assert!(dense[visited..].iter().all(|&v| v == 0.0));
        assert!(dense[..visited].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let p = TabularPolicy::uniform(1, 4, 5);
        assert!(p.log_prob(0, &[5]).is_err());
        assert!(p.log_prob(1, &[0]).is_err());
        assert!(p.log_prob(0, &[0; 5]).is_err());
    }

    #[test]
    fn recorded_logprobs_rederive() {
        let p = random_policy(4, 2, 10, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = sample_response(&p, 1, 8, &mut rng, 10, 1.0).unwrap();
            let again = p.log_prob(1, &s.tokens).unwrap();
            for (a, b) in s.old_logprobs.iter().zip(again) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn low_temperature_matches_greedy() {
        let p = random_policy(5, 1, 12, 9);
        let greedy = greedy_decode(&p, 0, 8, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let s = sample_response(&p, 0, 8, &mut rng, 12, 1e-4).unwrap();
            assert_eq!(s.tokens, greedy);
        }
        assert!(sample_response(&p, 0, 8, &mut rng, 12, 0.0).is_err());
    }

    #[test]
    fn greedy_ties_pick_lowest_id() {
        let p = TabularPolicy::uniform(1, 3, 4);
        assert_eq!(greedy_decode(&p, 0, 3, 3), vec![0, 0, 0]);
    }

    #[test]
    fn position_zero_frequencies_match_softmax() {
        let p = random_policy(6, 1, 1, 6);
        let probs: Vec<f64> = p.log_distribution(0, 0).iter().map(|l| l.exp()).collect();
        let n = 100_000;
        let mut counts = [0usize; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..n {
            let s = sample_response(&p, 0, 99, &mut rng, 1, 1.0).unwrap();
            counts[s.tokens[0] as usize] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let mean = n as f64 * probs[k];
            let sd = (n as f64 * probs[k] * (1.0 - probs[k])).sqrt();
            assert!((c as f64 - mean).abs() < 3.0 * sd, "token {k}: {c} vs {mean}±{sd}");
        }
    }

    #[test]
    fn layout_prior_probabilities() {
        let cfg = PolicyConfig::default();
        let p = TabularPolicy::with_layout_prior(&cfg);
        let d0: Vec<f64> = p.log_distribution(0, 0).iter().map(|l| l.exp()).collect();
        assert!((d0[TokenVocab::THINK_OPEN as usize] - 0.9).abs() < 1e-12);
        let v = cfg.vocab;
        let d4: f64 = p
            .log_distribution(3, 4)
            .iter()
            .enumerate()
            .filter(|(k, _)| (v.bin(0)..v.bin(0) + v.bins).contains(&(*k as u32)))
            .map(|(_, l)| l.exp())
            .sum();
        assert!((d4 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn buckets() {
        let cfg = SceneConfig::default();
        for seed in 0..100 {
            let task = make_task(generate_scene(seed, &cfg).unwrap(), seed, "t").unwrap();
            let b = feature_bucket(&task, 8);
            assert!(b < 8);
            assert_eq!(b, feature_bucket(&task, 8));
            assert_eq!(b % 4, target_quadrant(&task));
            assert!(feature_bucket(&task, 3) < 3);
        }
    }
}
