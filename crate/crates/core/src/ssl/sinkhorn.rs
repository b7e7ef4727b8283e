use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Result, SslError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub iterations: usize,
    /// When set, iterate until the prototype marginals are within this
    /// distance of uniform (at least `iterations` times).
    pub tolerance: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, iterations: 3, tolerance: None }
    }
}

const MAX_ITERATIONS: usize = 100_000;

fn logsumexp(v: ndarray::ArrayView1<f64>) -> f64 {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Balanced soft assignment of `B` samples to `P` prototypes.
///
/// Alternately rescales `exp(scores / ε)` towards prototype marginals
/// `1/P` and sample marginals `1/B` (in log space), ending on the sample
/// step. The result is scaled so each sample's row sums to one.
pub fn sinkhorn(scores: &Array2<f64>, cfg: &SinkhornConfig) -> Result<Array2<f64>> {
    let (b, p) = scores.dim();
    if b == 0 || p == 0 {
        return Err(SslError::Shape("sinkhorn needs a non-empty score matrix".into()));
    }
    if !(cfg.epsilon > 0.0) || cfg.iterations == 0 {
        return Err(SslError::Config(format!("sinkhorn needs ε > 0 and iterations ≥ 1, got {cfg:?}")));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(SslError::NumericGuard("non-finite sinkhorn scores".into()));
    }
    let (log_b, log_p) = ((b as f64).ln(), (p as f64).ln());
    let mut lq = scores / cfg.epsilon;
    let mut it = 0;
    loop {
        for mut col in lq.axis_iter_mut(Axis(1)) {
            let z = logsumexp(col.view()) + log_p;
            col -= z;
        }
        for mut row in lq.axis_iter_mut(Axis(0)) {
            let z = logsumexp(row.view()) + log_b;
            row -= z;
        }
        it += 1;
        let done = match cfg.tolerance {
            None => it >= cfg.iterations,
            Some(tol) => {
                it >= cfg.iterations && {
                    let worst = lq.axis_iter(Axis(1)).map(|c| (logsumexp(c).exp() - 1.0 / p as f64).abs()).fold(0.0, f64::max);
                    worst <= tol || it >= MAX_ITERATIONS
                }
            }
        };
        if done {
            break;
        }
    }
    Ok(lq.mapv(|v| (v + log_b).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn equal_scores_give_uniform_codes() {
        let q = sinkhorn(&Array2::from_elem((5, 4), 0.3), &SinkhornConfig::default()).unwrap();
        assert!(q.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn diagonal_scores_converge_to_identity() {
        let q = sinkhorn(&Array2::eye(6), &SinkhornConfig { epsilon: 0.05, iterations: 1000, tolerance: None }).unwrap();
        for ((i, j), v) in q.indexed_iter() {
            if i == j {
                assert!(v > &0.99);
            } else {
                assert!(v < &1e-3);
            }
        }
    }

    #[test]
    fn three_iterations_fix_sample_marginals() {
        let mut rng = stream(2, &[]);
        let s = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
        let q = sinkhorn(&s, &SinkhornConfig::default()).unwrap();
        for r in q.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-6);
        }
        assert!(q.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn converged_marginals_are_uniform() {
        let mut rng = stream(3, &[]);
        for _ in 0..20 {
            let (b, p) = (rng.random_range(1..=16), rng.random_range(1..=16));
            let s = Array2::from_shape_fn((b, p), |_| rng.random_range(-1.0..1.0));
            let cfg = SinkhornConfig { tolerance: Some(1e-9), ..Default::default() };
            let plan = sinkhorn(&s, &cfg).unwrap() / b as f64;
            for r in plan.rows() {
                assert!((r.sum() - 1.0 / b as f64).abs() <= 1e-6);
            }
            for c in plan.columns() {
                assert!((c.sum() - 1.0 / p as f64).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = SinkhornConfig::default();
        assert!(sinkhorn(&Array2::from_elem((2, 2), f64::NAN), &cfg).is_err());
        assert!(sinkhorn(&Array2::zeros((2, 2)), &SinkhornConfig { epsilon: 0.0, ..cfg }).is_err());
    }
}
