use nalgebra::Vector3;
use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::mpi::{build_mpi_layers, composite_planes, Composite, DepthRange, Plane};
use super::{plane_homography, warp_plane, CameraIntrinsics, CameraPose, DepthMap, GeometryError, PlaneLayer, Result};
use crate::imageio::{mean_color, Image};

/// Target-camera offset, in units of the configured translation scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewSpec {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ViewSpec {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn validate(&self, range: &ViewRange) -> Result<()> {
        let inside = |v: f64, m: f64| v.is_finite() && v.abs() <= m;
        if inside(self.x, range.x) && inside(self.y, range.y) && inside(self.z, range.z) {
            Ok(())
        } else {
            Err(GeometryError::Validation(format!("view {self:?} outside range {range:?}")))
        }
    }

    fn clamped(&self, range: &ViewRange) -> Self {
        Self {
            x: self.x.clamp(-range.x, range.x),
            y: self.y.clamp(-range.y, range.y),
            z: self.z.clamp(-range.z, range.z),
        }
    }
}

/// Symmetric closed shift ranges: `|x| ≤ self.x` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewRange {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ViewRange {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.x, self.y, self.z].iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(GeometryError::Validation(format!("invalid view range {self:?}")))
        }
    }
}

/// Fill for target pixels no plane covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    #[default]
    MeanColor,
    Constant([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub num_planes: usize,
    pub depth_range: DepthRange,
    /// `None` uses [`CameraIntrinsics::default_for`] the image size.
    pub intrinsics: Option<CameraIntrinsics>,
    /// Scene units per unit of shift. `None` means `depth_range.near`, so a
    /// shift of `s` moves the nearest plane by `s · fx` pixels.
    pub translation_scale: Option<f64>,
    /// Shifts are clamped to this range before rendering.
    pub max_shift: ViewRange,
    pub background: Background,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            num_planes: 64,
            depth_range: DepthRange::default(),
            intrinsics: None,
            translation_scale: None,
            max_shift: ViewRange::new(1.0, 1.0, 1.0),
            background: Background::MeanColor,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_planes < 2 {
            return Err(GeometryError::Validation("num_planes must be at least 2".into()));
        }
        self.depth_range.validate()?;
        self.max_shift.validate()?;
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        if let Some(s) = self.translation_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GeometryError::Validation("translation_scale must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn intrinsics_for(&self, height: usize, width: usize) -> Result<CameraIntrinsics> {
        match self.intrinsics {
            Some(k) if (k.height, k.width) == (height, width) => Ok(k),
            Some(k) => Err(GeometryError::Shape(format!(
                "intrinsics are for {}x{}, image is {height}x{width}",
                k.height, k.width
            ))),
            None => Ok(CameraIntrinsics::default_for(height, width)),
        }
    }

    /// `R = I`, `t = scale · [x, y, z]ᵀ` after clamping.
    pub fn pose_for(&self, view: &ViewSpec) -> CameraPose {
        let v = view.clamped(&self.max_shift);
        let scale = self.translation_scale.unwrap_or(self.depth_range.near);
        CameraPose::translation(Vector3::new(v.x, v.y, v.z) * scale)
    }
}

/// A rendered target view. `alpha < 1` marks disocclusions that were
/// filled with the background.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub color: Image,
    pub alpha: Array2<f64>,
    /// Composited disparity, present for RGB-D renders.
    pub depth: Option<DepthMap>,
}

fn render_stack(stack: &Array3<f64>, depth: &DepthMap, view: &ViewSpec, cfg: &GeometryConfig) -> Result<Composite> {
    cfg.validate()?;
    let (channels, h, w) = stack.dim();
    let k = cfg.intrinsics_for(h, w)?;
    let pose = cfg.pose_for(view);
    let mpi = build_mpi_layers(stack, depth, cfg.num_planes, cfg.depth_range)?;
    let mut warped = Vec::with_capacity(mpi.len());
    for plane in mpi.into_planes() {
        if plane.alpha.iter().all(|&a| a == 0.0) {
            continue;
        }
        // A plane at or behind the target camera center is not visible.
        if 1.0 - pose.translation.z / plane.depth <= 1e-6 {
            continue;
        }
        let hom = plane_homography(&k, &pose, plane.depth)?;
        let layer = PlaneLayer { color: plane.color, alpha: plane.alpha };
        let out = warp_plane(&layer, &hom)?;
        warped.push(Plane { color: out.color, alpha: out.alpha, depth: plane.depth });
    }
    if warped.is_empty() {
        return Ok(Composite { color: Array3::zeros((channels, h, w)), alpha: Array2::zeros((h, w)) });
    }
    composite_planes(&warped)
}

fn fill_background(color: &mut Image, alpha: &Array2<f64>, bg: [f64; 3]) {
    for (c, mut chan) in color.axis_iter_mut(Axis(0)).enumerate() {
        ndarray::Zip::from(&mut chan)
            .and(alpha)
            .for_each(|v, &a| *v = (*v + (1.0 - a) * bg[c]).clamp(0.0, 1.0));
    }
}

fn background_for(rgb: &Image, cfg: &GeometryConfig) -> [f64; 3] {
    match cfg.background {
        Background::MeanColor => mean_color(rgb),
        Background::Constant(c) => c,
    }
}

/// Renders `rgb` from the camera offset `view`: build the MPI, warp each
/// plane by its homography, composite, and fill holes with the background.
pub fn render_novel_view(rgb: &Image, depth: &DepthMap, view: &ViewSpec, cfg: &GeometryConfig) -> Result<RenderedView> {
    if rgb.dim().0 != 3 {
        return Err(GeometryError::Shape(format!("expected 3 color channels, got {}", rgb.dim().0)));
    }
    let out = render_stack(rgb, depth, view, cfg)?;
    let mut color = out.color;
    fill_background(&mut color, &out.alpha, background_for(rgb, cfg));
    Ok(RenderedView { color, alpha: out.alpha, depth: None })
}

/// Like [`render_novel_view`], also compositing the disparity map itself so
/// the target view carries a geometrically matching depth channel. Holes
/// are assigned disparity 0.
pub fn render_novel_view_rgbd(rgb: &Image, depth: &DepthMap, view: &ViewSpec, cfg: &GeometryConfig) -> Result<RenderedView> {
    if rgb.dim().0 != 3 {
        return Err(GeometryError::Shape(format!("expected 3 color channels, got {}", rgb.dim().0)));
    }
    let (_, h, w) = rgb.dim();
    let mut stack = Array3::<f64>::zeros((4, h, w));
    stack.slice_mut(s![0..3, .., ..]).assign(rgb);
    stack.slice_mut(s![3, .., ..]).assign(depth.values());
    let out = render_stack(&stack, depth, view, cfg)?;
    let mut color = out.color.slice(s![0..3, .., ..]).to_owned();
    fill_background(&mut color, &out.alpha, background_for(rgb, cfg));
    let disparity = out.color.slice(s![3, .., ..]).mapv(|v| v.clamp(0.0, 1.0));
    Ok(RenderedView { color, alpha: out.alpha, depth: Some(DepthMap::new(disparity)?) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Blue far background with a green marker and a red near square.
    fn two_layer_scene(size: usize) -> (Image, DepthMap) {
        let mut rgb = Array3::<f64>::zeros((3, size, size));
        rgb.slice_mut(s![2, .., ..]).fill(1.0);
        let mut depth = Array2::<f64>::zeros((size, size));
        for y in 4..10 {
            for x in 4..10 {
                rgb[[2, y, x]] = 0.0;
                rgb[[1, y, x]] = 1.0;
            }
        }
        for y in 24..36 {
            for x in 20..30 {
                rgb[[2, y, x]] = 0.0;
                rgb[[0, y, x]] = 1.0;
                depth[[y, x]] = 1.0;
            }
        }
        (rgb, DepthMap::new(depth).unwrap())
    }

    fn centroid_x(img: &Image, channel: usize) -> f64 {
        let (_, h, w) = img.dim();
        let (mut sum, mut n) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let hit = (0..3).all(|c| {
                    let v = img[[c, y, x]];
                    if c == channel { v > 0.9 } else { v < 0.1 }
                });
                if hit {
                    sum += x as f64;
                    n += 1.0;
                }
            }
        }
        sum / n
    }

    #[test]
    fn parallax_follows_reprojection() {
        let (rgb, depth) = two_layer_scene(64);
        let cfg = GeometryConfig::default();
        let fx = 64.0;
        for shift in [0.1, 0.2, 0.3, 0.4, 0.5] {
            let out = render_novel_view(&rgb, &depth, &ViewSpec::new(shift, 0.0, 0.0), &cfg).unwrap();
            let fg = centroid_x(&out.color, 0) - centroid_x(&rgb, 0);
            let bg = centroid_x(&out.color, 1) - centroid_x(&rgb, 1);
            assert!(fg > bg, "shift {shift}: fg {fg} bg {bg}");
            assert!((fg - fx * shift / 1.0).abs() < 1.0, "fg {fg}");
            assert!((bg - fx * shift / 100.0).abs() < 1.0, "bg {bg}");
        }
    }

    #[test]
    fn holes_are_marked_and_filled() {
        let (rgb, depth) = two_layer_scene(64);
        let out = render_novel_view(&rgb, &depth, &ViewSpec::new(0.3, 0.0, 0.0), &GeometryConfig::default()).unwrap();
        assert!(out.alpha.iter().any(|&a| a < 0.5));
        assert!(out.color.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rgbd_render_moves_depth_with_color() {
        let (rgb, depth) = two_layer_scene(64);
        let out = render_novel_view_rgbd(&rgb, &depth, &ViewSpec::new(0.2, 0.0, 0.0), &GeometryConfig::default()).unwrap();
        let d = out.depth.unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if out.color[[0, y, x]] > 0.99 && out.color[[1, y, x]] < 0.01 {
                    assert!(d.values()[[y, x]] > 0.99);
                }
            }
        }
    }

    #[test]
    fn zoom_past_plane_culls_it() {
        let (rgb, depth) = two_layer_scene(64);
        let out = render_novel_view(&rgb, &depth, &ViewSpec::new(0.0, 0.0, 1.0), &GeometryConfig::default()).unwrap();
        assert!(out.color.iter().all(|v| v.is_finite()));
        // The near square sits on the culled plane; only background remains there.
        assert!(out.color[[0, 30, 25]] < 0.5);
    }

    #[test]
    fn view_range_validation() {
        let r = ViewRange::new(0.5, 0.5, 0.0);
        assert!(ViewSpec::new(0.5, -0.5, 0.0).validate(&r).is_ok());
        assert!(ViewSpec::new(0.6, 0.0, 0.0).validate(&r).is_err());
        assert!(ViewSpec::new(0.0, 0.0, 0.1).validate(&r).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn zero_shift_reproduces_source(seed in 0u64..100_000, h in 2usize..20, w in 2usize..20) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rgb = Array::from_shape_fn((3, h, w), |_| rng.random::<f64>());
            let depth = DepthMap::new(Array::from_shape_fn((h, w), |_| rng.random::<f64>())).unwrap();
            let out = render_novel_view(&rgb, &depth, &ViewSpec::default(), &GeometryConfig::default()).unwrap();
            let err = (&out.color - &rgb).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            prop_assert!(err <= 1e-6, "L∞ {err}");
        }
    }
}
