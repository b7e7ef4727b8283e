use std::f64::consts::PI;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::nn::{Param, Sequential};
use super::{Result, SslError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        #[serde(default = "sgd_lr")]
        lr: f64,
        #[serde(default = "beta1")]
        momentum: f64,
        #[serde(default = "sgd_wd")]
        weight_decay: f64,
    },
    Adam {
        #[serde(default = "adam_lr")]
        lr: f64,
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn sgd_lr() -> f64 {
    0.06
}
fn sgd_wd() -> f64 {
    5e-4
}
fn adam_lr() -> f64 {
    1e-3
}
fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd { lr: sgd_lr(), momentum: beta1(), weight_decay: sgd_wd() }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: beta1(), beta2: beta2(), eps: adam_eps(), weight_decay }
    }

    pub fn base_lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, momentum, weight_decay } => lr >= 0.0 && (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            OptimizerConfig::Adam { lr, beta1, beta2, eps, weight_decay } => {
                lr >= 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && weight_decay >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SslError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total)) as f64 / total as f64;
    base * 0.5 * (1.0 + (PI * t).cos())
}

/// EMA coefficient for the BYOL target network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TauSchedule {
    pub base: f64,
    /// Raise τ towards 1 on a cosine over training.
    pub cosine: bool,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self { base: 0.99, cosine: false }
    }
}

impl TauSchedule {
    pub fn at(&self, step: u64, total: u64) -> f64 {
        if !self.cosine || total == 0 {
            return self.base;
        }
        let t = step.min(total) as f64 / total as f64;
        1.0 - (1.0 - self.base) * ((PI * t).cos() + 1.0) / 2.0
    }
}

/// SGD with momentum (coupled weight decay) or Adam with L2 decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    /// Per-parameter slots: one momentum buffer for SGD, `(m, v)` for Adam.
    pub state: Vec<Vec<ArrayD<f64>>>,
    pub steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, state: Vec::new(), steps: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        let slots = match self.config {
            OptimizerConfig::Sgd { .. } => 1,
            OptimizerConfig::Adam { .. } => 2,
        };
        if self.state.is_empty() {
            self.state = params.iter().map(|p| vec![ArrayD::zeros(p.value.raw_dim()); slots]).collect();
        }
        if self.state.len() != params.len() || self.state.iter().zip(params.iter()).any(|(s, p)| s[0].shape() != p.value.shape()) {
            return Err(SslError::Shape("optimizer state does not match parameters".into()));
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { momentum, weight_decay, .. } => {
                for (p, s) in params.iter_mut().zip(&mut self.state) {
                    let p = &mut **p;
                    Zip::from(&mut p.value).and(&p.grad).and(&mut s[0]).for_each(|w, &g, b| {
                        let g = g + weight_decay * *w;
                        *b = momentum * *b + g;
                        *w -= lr * *b;
                    });
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps, weight_decay, .. } => {
                let t = self.steps as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for (p, s) in params.iter_mut().zip(&mut self.state) {
                    let p = &mut **p;
                    let (m, v) = s.split_at_mut(1);
                    Zip::from(&mut p.value).and(&p.grad).and(&mut m[0]).and(&mut v[0]).for_each(|w, &g, m, v| {
                        let g = g + weight_decay * *w;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
                }
            }
        }
        Ok(())
    }
}

/// `target ← τ·target + (1−τ)·online` over all parameters.
pub fn ema_update(target: &mut Sequential, online: &Sequential, tau: f64) -> Result<()> {
    let src = online.params();
    let mut dst = target.params_mut();
    if src.len() != dst.len() || src.iter().zip(dst.iter()).any(|(a, b)| a.value.shape() != b.value.shape()) {
        return Err(SslError::Shape("target and online networks differ".into()));
    }
    for (t, o) in dst.iter_mut().zip(src) {
        Zip::from(&mut t.value).and(&o.value).for_each(|t, &o| *t = tau * *t + (1.0 - tau) * o);
    }
    Ok(())
}

/// L2 norm of all gradients.
pub fn grad_norm(params: &[&mut Param]) -> f64 {
    params.iter().map(|p| p.grad.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::nn::{Layer, Linear};
    use ndarray::IxDyn;

    fn scalar_net(v: f64) -> Sequential {
        let mut l = Linear::new(1, 1, false, &mut crate::rng::stream(0, &[]));
        l.weight.value = ArrayD::from_elem(IxDyn(&[1, 1]), v);
        Sequential::new(vec![Layer::Linear(l)])
    }

    #[test]
    fn ema_extremes_and_arithmetic() {
        let online = scalar_net(0.0);
        for (tau, expect) in [(1.0, 1.0), (0.0, 0.0), (0.99, 0.99)] {
            let mut target = scalar_net(1.0);
            ema_update(&mut target, &online, tau).unwrap();
            assert!((target.params()[0].value[[0, 0]] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_matches_hand_computation() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 1.0));
        p.grad.fill(0.5);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.1 });
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[[0]] - (1.0 - 0.1 * 0.6)).abs() < 1e-15);
        opt.step(&mut [&mut p], 0.1).unwrap();
        let g2 = 0.5 + 0.1 * 0.94;
        assert!((p.value[[0]] - (0.94 - 0.1 * (0.9 * 0.6 + g2))).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[2]), 1.0));
        p.grad.fill(-3.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.001, 0.0));
        opt.step(&mut [&mut p], 0.001).unwrap();
        assert!((p.value[[0]] - 1.001).abs() < 1e-9);
    }

    #[test]
    fn schedules() {
        assert_eq!(cosine_lr(0.2, 0, 100), 0.2);
        assert!(cosine_lr(0.2, 100, 100).abs() < 1e-15);
        assert!((cosine_lr(0.2, 50, 100) - 0.1).abs() < 1e-12);
        let t = TauSchedule { base: 0.99, cosine: true };
        assert!((t.at(0, 10) - 0.99).abs() < 1e-15 && (t.at(10, 10) - 1.0).abs() < 1e-15);
        assert_eq!(TauSchedule::default().at(5, 10), 0.99);
    }
}
