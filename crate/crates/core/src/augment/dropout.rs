use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, Result};
use crate::geometry::DepthMap;

/// Probability `p` of clearing a view's depth channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthDropout {
    pub p: f64,
}

impl Default for DepthDropout {
    fn default() -> Self {
        Self { p: 0.5 }
    }
}

impl DepthDropout {
    pub fn new(p: f64) -> Result<Self> {
        let d = Self { p };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.p) {
            Ok(())
        } else {
            Err(AugmentError::Invalid(format!("dropout p = {} outside [0, 1]", self.p)))
        }
    }
}

/// With probability `p`, replaces `depth` by zeros. Returns whether it did.
pub fn depth_dropout<R: Rng + ?Sized>(depth: DepthMap, cfg: &DepthDropout, rng: &mut R) -> (DepthMap, bool) {
    if rng.random::<f64>() < cfg.p {
        let (h, w) = depth.dim();
        (DepthMap::zeros(h, w), true)
    } else {
        (depth, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array2;

    fn ones() -> DepthMap {
        DepthMap::new(Array2::ones((4, 4))).unwrap()
    }

    #[test]
    fn extremes() {
        let mut rng = stream(1, &[]);
        for _ in 0..1000 {
            let (d, dropped) = depth_dropout(ones(), &DepthDropout { p: 0.0 }, &mut rng);
            assert!(!dropped);
            assert_eq!(d, ones());
            let (d, dropped) = depth_dropout(ones(), &DepthDropout { p: 1.0 }, &mut rng);
            assert!(dropped && d.is_all_zero());
        }
    }

    #[test]
    fn half_rate_within_three_sigma() {
        let mut rng = stream(2, &[]);
        let n = 10_000;
        let count = (0..n)
            .filter(|_| {
                let (d, dropped) = depth_dropout(ones(), &DepthDropout { p: 0.5 }, &mut rng);
                assert_eq!(dropped, d.is_all_zero());
                dropped
            })
            .count();
        assert!((count as f64 / n as f64 - 0.5).abs() <= 0.015, "{count}");
    }

    #[test]
    fn validates_probability() {
        assert!(DepthDropout::new(1.2).is_err());
        assert!(DepthDropout::new(-0.1).is_err());
        assert!(DepthDropout::new(0.3).is_ok());
    }
}
