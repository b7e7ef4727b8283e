use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 20, temperature: 0.1 }
    }
}

fn unit_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12)).insert_axis(Axis(1));
    &x / &n
}

/// Cosine-similarity kNN with `exp(sim / T)` vote weights. Neighbors with
/// equal similarity are taken in train order; vote ties go to the smaller
/// class id.
pub fn knn_predict(
    train: ArrayView2<f64>,
    train_labels: &[usize],
    test: ArrayView2<f64>,
    num_classes: usize,
    cfg: &KnnConfig,
) -> Result<Vec<usize>> {
    if train.nrows() == 0 || test.nrows() == 0 {
        return Err(EvalError::Config("kNN needs non-empty train and test sets".into()));
    }
    if cfg.k < 1 || cfg.k > train.nrows() {
        return Err(EvalError::Config(format!("k = {} must lie in [1, {}]", cfg.k, train.nrows())));
    }
    if !(cfg.temperature > 0.0) {
        return Err(EvalError::Config("kNN temperature must be positive".into()));
    }
    if train.nrows() != train_labels.len() || train.ncols() != test.ncols() {
        return Err(EvalError::Shape(format!("train {:?} / {} labels / test {:?}", train.dim(), train_labels.len(), test.dim())));
    }
    if let Some(&bad) = train_labels.iter().find(|&&l| l >= num_classes) {
        return Err(EvalError::Config(format!("label {bad} outside {num_classes} classes")));
    }
    let sims = unit_rows(test).dot(&unit_rows(train).t());
    let mut order: Vec<usize> = (0..train.nrows()).collect();
    Ok(sims
        .rows()
        .into_iter()
        .map(|row| {
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut votes = vec![0.0; num_classes];
            for &j in &order[..cfg.k] {
                votes[train_labels[j]] += (row[j] / cfg.temperature).exp();
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// kNN top-1 accuracy in percent.
pub fn knn_eval(
    train: ArrayView2<f64>,
    train_labels: &[usize],
    test: ArrayView2<f64>,
    test_labels: &[usize],
    num_classes: usize,
    cfg: &KnnConfig,
) -> Result<f64> {
    if test.nrows() != test_labels.len() {
        return Err(EvalError::Shape("test features and labels differ in length".into()));
    }
    let pred = knn_predict(train, train_labels, test, num_classes, cfg)?;
    Ok(accuracy(&pred, test_labels))
}

pub(crate) fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn exact_match_with_k1() {
        let train = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.2]).unwrap();
        let p = knn_predict(train.view(), &[2, 0, 1], train.row(1).insert_axis(Axis(0)), 3, &KnnConfig { k: 1, temperature: 0.1 }).unwrap();
        assert_eq!(p, vec![0]);
    }

    #[test]
    fn separated_clusters() {
        let mut rng = stream(1, &[]);
        let mut make = |n: usize| {
            let x = Array2::from_shape_fn((2 * n, 3), |(i, j)| {
                let s = if i < n { 1.0 } else { -1.0 };
                if j == 0 { s } else { 0.1 * rng.random_range(-1.0..1.0) }
            });
            let y: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
            (x, y)
        };
        let (tr, ytr) = make(10);
        let (te, yte) = make(5);
        assert_eq!(knn_eval(tr.view(), &ytr, te.view(), &yte, 2, &KnnConfig { k: 3, temperature: 0.1 }).unwrap(), 100.0);
    }

    #[test]
    fn vote_ties_go_to_smaller_class() {
        let train = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let test = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let p = knn_predict(train.view(), &[1, 0], test.view(), 2, &KnnConfig { k: 2, temperature: 0.1 }).unwrap();
        assert_eq!(p, vec![0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = Array2::<f64>::ones((2, 2));
        let cfg = KnnConfig { k: 3, temperature: 0.1 };
        assert!(knn_predict(x.view(), &[0, 1], x.view(), 2, &cfg).is_err());
        assert!(knn_predict(x.view(), &[0, 1], x.view(), 2, &KnnConfig { k: 0, ..cfg }).is_err());
        assert!(knn_predict(Array2::<f64>::zeros((0, 2)).view(), &[], x.view(), 2, &KnnConfig { k: 1, ..cfg }).is_err());
    }
}
