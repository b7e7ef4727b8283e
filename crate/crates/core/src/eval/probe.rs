use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::knn::accuracy;
use super::{EvalError, Result};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Z-score features with training-set statistics first.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { lr_grid: vec![0.2, 0.5, 0.8, 5.0], epochs: 100, batch_size: 256, momentum: 0.9, weight_decay: 0.0, standardize: true, seed: 0 }
    }
}

/// A softmax classifier over (optionally standardized) features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl LinearHead {
    fn prepare(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.prepare(x).dot(&self.weight.t()) + &self.bias
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().fold(0, |b, (i, &v)| if v > r[b] { i } else { b }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub best_lr: f64,
    pub accuracy: f64,
    /// Validation accuracy per grid LR; `None` where training diverged.
    pub per_lr: Vec<(f64, Option<f64>)>,
    pub head: LinearHead,
}

/// Trains one head with SGD (momentum, cosine decay over epochs). Returns
/// `None` if the loss becomes non-finite.
pub fn train_linear(x: ArrayView2<f64>, y: &[usize], num_classes: usize, lr: f64, cfg: &ProbeConfig, stream_tag: u64) -> Option<LinearHead> {
    let (n, d) = x.dim();
    let (mean, scale) = if cfg.standardize {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        (mean, std)
    } else {
        (Array1::zeros(d), Array1::ones(d))
    };
    let mut head = LinearHead { weight: Array2::zeros((num_classes, d)), bias: Array1::zeros(num_classes), mean, scale };
    let xs = head.prepare(x);
    let (mut vw, mut vb) = (Array2::<f64>::zeros((num_classes, d)), Array1::<f64>::zeros(num_classes));
    let mut order: Vec<usize> = (0..n).collect();
    let bs = cfg.batch_size.clamp(1, n);
    for epoch in 0..cfg.epochs {
        let lr_e = lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        order.shuffle(&mut stream(cfg.seed, &[tags::PROBE, stream_tag, epoch as u64]));
        for chunk in order.chunks(bs) {
            let xb = xs.select(Axis(0), chunk);
            let mut logits = xb.dot(&head.weight.t()) + &head.bias;
            let mut loss = 0.0;
            for (mut r, &i) in logits.rows_mut().into_iter().zip(chunk) {
                let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                r.mapv_inplace(|v| (v - m).exp());
                let z = r.sum();
                r /= z;
                loss -= r[y[i]].ln();
                r[y[i]] -= 1.0;
            }
            if !loss.is_finite() {
                return None;
            }
            let g = logits / chunk.len() as f64;
            let gw = g.t().dot(&xb) + &head.weight * cfg.weight_decay;
            let gb = g.sum_axis(Axis(0));
            vw = &vw * cfg.momentum + gw;
            vb = &vb * cfg.momentum + gb;
            head.weight.scaled_add(-lr_e, &vw);
            head.bias.scaled_add(-lr_e, &vb);
        }
        if head.weight.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    Some(head)
}

/// Grid search over `cfg.lr_grid`, reporting the best validation accuracy.
pub fn linear_probe(
    train: ArrayView2<f64>,
    train_labels: &[usize],
    val: ArrayView2<f64>,
    val_labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if train.nrows() == 0 || val.nrows() == 0 || train.nrows() != train_labels.len() || val.nrows() != val_labels.len() {
        return Err(EvalError::Shape("probe features and labels must be non-empty and aligned".into()));
    }
    if cfg.lr_grid.is_empty() || cfg.epochs == 0 {
        return Err(EvalError::Config("probe needs a non-empty LR grid and at least one epoch".into()));
    }
    if train_labels.iter().any(|&l| l >= num_classes) {
        return Err(EvalError::Config("probe label out of range".into()));
    }
    let mut best: Option<(f64, f64, LinearHead)> = None;
    let mut per_lr = Vec::new();
    for (i, &lr) in cfg.lr_grid.iter().enumerate() {
        match train_linear(train, train_labels, num_classes, lr, cfg, i as u64) {
            Some(head) => {
                let acc = accuracy(&head.predict(val), val_labels);
                per_lr.push((lr, Some(acc)));
                if best.as_ref().is_none_or(|(_, a, _)| acc > *a) {
                    best = Some((lr, acc, head));
                }
            }
            None => {
                log::warn!("linear probe diverged at lr {lr}; skipping");
                per_lr.push((lr, None));
            }
        }
    }
    let (best_lr, accuracy, head) = best.ok_or_else(|| EvalError::Config("linear probe diverged at every grid LR".into()))?;
    Ok(ProbeResult { best_lr, accuracy, per_lr, head })
}
