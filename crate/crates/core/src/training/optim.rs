//! Per-group AdamW and reduce-on-plateau scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Validation mean loss, minimized.
    ValLoss,
    /// Validation recall@1, maximized.
    ValRecall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub trunk: GroupConfig,
    pub fc: GroupConfig,
    pub proxy: GroupConfig,
    pub epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub sigma: f64,
    pub monitor: Monitor,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            trunk: GroupConfig {
                lr: 1e-4,
                weight_decay: 0.2,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            fc: GroupConfig {
                lr: 1e-3,
                weight_decay: 0.001,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            proxy: GroupConfig {
                lr: 10.0,
                weight_decay: 0.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1.0,
            },
            epochs: 25,
            plateau_patience: 4,
            plateau_factor: 0.25,
            sigma: 0.06,
            monitor: Monitor::ValLoss,
        }
    }
}

/// Search ranges used when tuning learning rates.
pub const TRUNK_LR_RANGE: (f64, f64) = (1e-6, 1e-4);
pub const FC_LR_RANGE: (f64, f64) = (1e-4, 1e-2);
pub const PROXY_LR_RANGE: (u32, u32) = (1, 100);

/// First/second moment buffers and the step counter of one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay and bias correction.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &GroupConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Reduce-on-plateau: after `patience + 1` consecutive reports without a
/// strict improvement, every learning rate is multiplied by `factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub maximize: bool,
    pub best: Option<f64>,
    pub bad_reports: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64, monitor: Monitor) -> Self {
        Self {
            patience,
            factor,
            maximize: monitor == Monitor::ValRecall,
            best: None,
            bad_reports: 0,
        }
    }

    /// Records `value`; scales `lrs` in place and returns `true` on a reduction.
    pub fn update(&mut self, value: f64, lrs: &mut [f64]) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) if self.maximize => value > b,
            Some(b) => value < b,
        };
        if improved {
            self.best = Some(value);
            self.bad_reports = 0;
            return false;
        }
        self.bad_reports += 1;
        if self.bad_reports > self.patience {
            for lr in lrs.iter_mut() {
                *lr *= self.factor;
            }
            self.bad_reports = 0;
            return true;
        }
        false
    }
}
