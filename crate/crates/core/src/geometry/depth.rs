use ndarray::Array2;

use super::{GeometryError, Result};

/// Per-pixel relative disparity: 1 is nearest, 0 is farthest.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Array2<f64>,
}

impl DepthMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(GeometryError::Validation(format!(
                "depth value {v} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { values: Array2::zeros((height, width)) }
    }

    /// Min-max normalizes raw estimator output into `[0, 1]`. A constant
    /// map becomes all zeros.
    pub fn normalized(raw: &Array2<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::Validation("non-finite raw depth".into()));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values = if span > 0.0 {
            raw.mapv(|v| ((v - lo) / span).clamp(0.0, 1.0))
        } else {
            Array2::zeros(raw.dim())
        };
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    /// `(height, width)`.
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(DepthMap::new(array![[0.0, 1.5]]).is_err());
        assert!(DepthMap::new(array![[f64::NAN, 0.5]]).is_err());
        assert!(DepthMap::new(array![[0.0, 1.0]]).is_ok());
    }

    #[test]
    fn normalization_spans_unit_interval() {
        let d = DepthMap::normalized(&array![[2.0, 4.0], [3.0, 6.0]]).unwrap();
        assert_eq!(d.values(), &array![[0.0, 0.5], [0.25, 1.0]]);
        assert!(DepthMap::normalized(&array![[3.0, 3.0]]).unwrap().is_all_zero());
    }
}
