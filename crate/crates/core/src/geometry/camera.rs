use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Uncalibrated default: `fx = fy = max(H, W)`, principal point at the
    /// image center.
    pub fn default_for(height: usize, width: usize) -> Self {
        let f = height.max(width) as f64;
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::Validation(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid transform between source and target cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(err <= 1e-9) || !((det - 1.0).abs() <= 1e-9) {
            return Err(GeometryError::Validation(format!(
                "rotation not orthonormal (|RᵀR - I| = {err:e}, det = {det})"
            )));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::Validation("non-finite translation".into()));
        }
        Ok(())
    }
}

/// Homography induced by the fronto-parallel plane at depth `depth`:
/// `H = K (R - t nᵀ / d) K⁻¹` with `n = [0, 0, 1]ᵀ`. It maps a homogeneous
/// target pixel to the corresponding source pixel.
pub fn plane_homography(k: &CameraIntrinsics, pose: &CameraPose, depth: f64) -> Result<Matrix3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::Domain(format!("plane depth must be positive, got {depth}")));
    }
    k.validate()?;
    pose.validate()?;
    let km = k.matrix();
    let k_inv = km
        .try_inverse()
        .ok_or_else(|| GeometryError::Validation("singular intrinsics".into()))?;
    let normal = Vector3::new(0.0, 0.0, 1.0);
    let h = km * (pose.rotation - pose.translation * normal.transpose() / depth) * k_inv;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::Domain("non-finite homography".into()));
    }
    Ok(h)
}
