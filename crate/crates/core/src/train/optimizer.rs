use serde::{Deserialize, Serialize};

use super::config::{OptimizerConfig, OptimizerKind};

/// Optimizer state; moments are empty for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, num_params: usize) -> Self {
        let n = match cfg.kind {
            OptimizerKind::Adam => num_params,
            OptimizerKind::Sgd => 0,
        };
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One ascent step on `params` along `grad`.
    pub fn ascend(&mut self, cfg: &OptimizerConfig, lr: f64, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - cfg.beta1.powi(t);
                let c2 = 1.0 - cfg.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                    self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] += lr * mhat / (vhat.sqrt() + cfg.eps);
                }
            }
        }
    }
}
