//! Adam/AdamW, cosine schedules and early stopping.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecay {
    /// AdamW: `p <- p * (1 - lr * wd)` before the Adam step.
    Decoupled,
    /// Classic Adam: `wd * p` is added to the gradient.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, decay: WeightDecay::Decoupled }
    }
}

impl AdamConfig {
    pub fn adamw(weight_decay: f64) -> Self {
        Self { weight_decay, decay: WeightDecay::Decoupled, ..Self::default() }
    }

    pub fn adam(weight_decay: f64) -> Self {
        Self { weight_decay, decay: WeightDecay::L2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if !ok {
            return Err(Error::config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn matches(&self, params: &[Tensor]) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params.iter().zip(&self.m).zip(&self.v).all(|((p, m), v)| p.len() == m.len() && p.len() == v.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state: OptimizerState::new(params) })
    }

    pub fn with_state(config: AdamConfig, state: OptimizerState, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        if !state.matches(params) {
            return Err(Error::Malformed("optimizer state does not match the parameters".into()));
        }
        Ok(Self { config, state })
    }

    /// One update at learning rate `lr`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || !self.state.matches(params) {
            return Err(Error::shape("adam step", format!("{} parameters, {} gradients", params.len(), grads.len())));
        }
        let AdamConfig { beta1, beta2, eps, weight_decay: wd, decay } = self.config;
        self.state.step += 1;
        let t = self.state.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam step", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = match decay {
                    WeightDecay::L2 => gv + wd * *pv,
                    WeightDecay::Decoupled => {
                        *pv *= 1.0 - lr * wd;
                        gv
                    }
                };
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                *pv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScheduleKind {
    Constant,
    /// Half-cosine from the base rate to 0 over `total` epochs.
    Cosine,
    /// Cosine annealing restarted every `period` epochs.
    WarmRestarts { period: usize },
}

/// Per-epoch learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub total: usize,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, base_lr: f64, total: usize) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {base_lr}")));
        }
        match kind {
            ScheduleKind::Cosine if total == 0 => Err(Error::config("cosine schedule needs at least one epoch")),
            ScheduleKind::WarmRestarts { period: 0 } => Err(Error::config("restart period must be positive")),
            _ => Ok(Self { kind, base_lr, total }),
        }
    }

    /// Rate for epoch `e` (0-based). Annealing reaches 0 only at `e = total`,
    /// which is never trained.
    pub fn lr(&self, epoch: usize) -> f64 {
        let cosine = |pos: f64, len: f64| 0.5 * self.base_lr * (1.0 + (PI * pos / len).cos());
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Cosine => cosine(epoch.min(self.total) as f64, self.total as f64),
            ScheduleKind::WarmRestarts { period } => cosine((epoch % period) as f64, period as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Wait,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict decrease of
/// the monitored loss (`patience = 0` stops at the first such epoch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: None, bad_epochs: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            Verdict::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Wait
            }
        }
    }
}
