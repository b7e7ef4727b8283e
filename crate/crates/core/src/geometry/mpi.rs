use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{DepthMap, GeometryError, Result};
use crate::imageio::Image;

/// Scene-depth interval spanned by the planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { near: 1.0, far: 100.0 }
    }
}

impl DepthRange {
    pub fn validate(&self) -> Result<()> {
        if self.near > 0.0 && self.far > self.near && self.far.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::Validation(format!("invalid depth range {self:?}")))
        }
    }

    /// `n` plane depths, uniform in disparity, nearest first.
    pub fn plane_depths(&self, n: usize) -> Vec<f64> {
        let (s_near, s_far) = (1.0 / self.near, 1.0 / self.far);
        (0..n)
            .map(|i| {
                let s = s_near + (s_far - s_near) * i as f64 / (n - 1) as f64;
                1.0 / s
            })
            .collect()
    }
}

/// One fronto-parallel layer. `color` is `(C, H, W)`, typically `C = 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub color: Array3<f64>,
    pub alpha: Array2<f64>,
    pub depth: f64,
}

/// Planes ordered front to back (strictly increasing depth), normal `[0,0,1]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplaneImage {
    planes: Vec<Plane>,
}

impl MultiplaneImage {
    pub fn new(planes: Vec<Plane>) -> Result<Self> {
        if planes.len() < 2 {
            return Err(GeometryError::Validation(format!(
                "an MPI needs at least 2 planes, got {}",
                planes.len()
            )));
        }
        let dim = planes[0].alpha.dim();
        for w in planes.windows(2) {
            if !(w[0].depth < w[1].depth) {
                return Err(GeometryError::Validation("plane depths must increase".into()));
            }
        }
        for p in &planes {
            let (_, h, w) = p.color.dim();
            if p.alpha.dim() != dim || (h, w) != dim {
                return Err(GeometryError::Shape("plane sizes differ".into()));
            }
            if p.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(GeometryError::Validation("alpha outside [0, 1]".into()));
            }
        }
        Ok(Self { planes })
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    /// Compositing weights `w_i = α_i Π_{j<i} (1 - α_j)`, one map per plane.
    pub fn weights(&self) -> Vec<Array2<f64>> {
        let dim = self.planes[0].alpha.dim();
        let mut transmittance = Array2::<f64>::ones(dim);
        self.planes
            .iter()
            .map(|p| {
                let w = &p.alpha * &transmittance;
                transmittance *= &p.alpha.mapv(|a| 1.0 - a);
                w
            })
            .collect()
    }
}

/// Slices `rgb` into `num_planes` planes according to its disparity.
///
/// Each pixel's unit mass is split between its two bracketing planes by
/// linear hat weights in disparity. Alphas are chosen so the compositing
/// weights equal those masses: the front bracket gets `α = m_front` and the
/// back bracket `α = 1`. Every plane carries the source color everywhere.
pub fn build_mpi(rgb: &Image, depth: &DepthMap, num_planes: usize, range: DepthRange) -> Result<MultiplaneImage> {
    if rgb.dim().0 != 3 {
        return Err(GeometryError::Shape(format!("expected 3 color channels, got {}", rgb.dim().0)));
    }
    build_mpi_layers(rgb, depth, num_planes, range)
}

/// [`build_mpi`] over an arbitrary `(C, H, W)` stack.
pub fn build_mpi_layers(color: &Array3<f64>, depth: &DepthMap, num_planes: usize, range: DepthRange) -> Result<MultiplaneImage> {
    let (_, h, w) = color.dim();
    if depth.dim() != (h, w) {
        return Err(GeometryError::Shape(format!(
            "image is {h}x{w} but depth is {:?}",
            depth.dim()
        )));
    }
    if num_planes < 2 {
        return Err(GeometryError::Validation("num_planes must be at least 2".into()));
    }
    range.validate()?;
    let depths = range.plane_depths(num_planes);
    let mut alphas = vec![Array2::<f64>::zeros((h, w)); num_planes];
    let last = (num_planes - 1) as f64;
    for ((y, x), &v) in depth.values().indexed_iter() {
        if !v.is_finite() {
            return Err(GeometryError::Validation("non-finite depth".into()));
        }
        let u = ((1.0 - v) * last).clamp(0.0, last);
        let j = (u.floor() as usize).min(num_planes - 2);
        let frac = u - j as f64;
        alphas[j][[y, x]] = 1.0 - frac;
        if frac > 0.0 {
            alphas[j + 1][[y, x]] = 1.0;
        }
    }
    let planes = alphas
        .into_iter()
        .zip(depths)
        .map(|(alpha, d)| Plane { color: color.clone(), alpha, depth: d })
        .collect();
    MultiplaneImage::new(planes)
}

/// Output of [`composite`]: accumulated color and coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: Array3<f64>,
    pub alpha: Array2<f64>,
}

/// Back-to-front over-compositing: for `i = N..1`,
/// `out ← c_i α_i + out (1 - α_i)`. Output alpha is `1 - Π_i (1 - α_i)`.
pub fn composite(mpi: &MultiplaneImage) -> Result<Composite> {
    composite_planes(mpi.planes())
}

pub(crate) fn composite_planes(planes: &[Plane]) -> Result<Composite> {
    let first = planes
        .first()
        .ok_or_else(|| GeometryError::Validation("cannot composite an empty plane list".into()))?;
    let mut color = Array3::<f64>::zeros(first.color.dim());
    let mut transmittance = Array2::<f64>::ones(first.alpha.dim());
    for p in planes.iter().rev() {
        for (c, mut out) in color.axis_iter_mut(Axis(0)).enumerate() {
            Zip::from(&mut out)
                .and(&p.color.index_axis(Axis(0), c))
                .and(&p.alpha)
                .for_each(|o, &ci, &a| *o = ci * a + *o * (1.0 - a));
        }
        Zip::from(&mut transmittance).and(&p.alpha).for_each(|t, &a| *t *= 1.0 - a);
    }
    color.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let alpha = transmittance.mapv(|t| (1.0 - t).clamp(0.0, 1.0));
    Ok(Composite { color, alpha })
}
