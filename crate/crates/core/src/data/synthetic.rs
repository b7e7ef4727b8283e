//! Procedural RGB-D scenes with exact per-pixel disparity.
//!
//! Each scene is a textured far background, an optional mid-depth
//! distractor and a near foreground object. The label combines the
//! object's shape with its color family.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{img_err, io_err, sidecar, Result};
use crate::geometry::DepthMap;
use crate::imageio::{save_png, Image};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disk,
    Triangle,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Square, ShapeKind::Disk, ShapeKind::Triangle, ShapeKind::Ring];

    fn name(&self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Disk => "disk",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Ring => "ring",
        }
    }

    /// Whether offset `(dx, dy)` from the center, in units of the radius,
    /// lies inside the shape rotated by `angle`.
    fn contains(&self, dx: f64, dy: f64, angle: f64) -> bool {
        let (s, c) = angle.sin_cos();
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        match self {
            ShapeKind::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            ShapeKind::Disk => u * u + v * v <= 1.0,
            ShapeKind::Ring => (0.3025..=1.0).contains(&(u * u + v * v)),
            ShapeKind::Triangle => (0..3).all(|k| {
                let t = std::f64::consts::TAU * k as f64 / 3.0;
                let (ns, nc) = t.sin_cos();
                nc * u + ns * v <= 0.5
            }),
        }
    }
}

const FAMILIES: [&str; 2] = ["warm", "cool"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneLayer {
    pub shape: ShapeKind,
    pub color: [f64; 3],
    /// Disparity in `(0, 1]`; larger is nearer.
    pub disparity: f64,
    /// Center `(x, y)` in pixels.
    pub center: (f64, f64),
    pub radius: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub size: usize,
    /// Colors at the two ends of a linear background gradient.
    pub background: [[f64; 3]; 2],
    pub gradient_angle: f64,
    pub background_disparity: f64,
    pub noise: f64,
    pub noise_seed: u64,
    /// Back to front.
    pub layers: Vec<SceneLayer>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub size: usize,
    pub distractor_prob: f64,
    pub background_disparity: (f64, f64),
    pub distractor_disparity: (f64, f64),
    pub object_disparity: (f64, f64),
    /// Object radius as a fraction of the canvas side.
    pub object_radius: (f64, f64),
    pub distractor_radius: (f64, f64),
    /// Standard deviation of the per-pixel texture noise.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 32,
            distractor_prob: 0.5,
            background_disparity: (0.0, 0.2),
            distractor_disparity: (0.3, 0.5),
            object_disparity: (0.6, 1.0),
            object_radius: (0.22, 0.38),
            distractor_radius: (0.12, 0.22),
            noise: 0.04,
        }
    }
}

impl SyntheticConfig {
    pub const NUM_CLASSES: usize = 8;

    pub fn class_name(label: usize) -> String {
        format!("{label}_{}_{}", ShapeKind::ALL[label / 2].name(), FAMILIES[label % 2])
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h6.floor() as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    r.0 + (r.1 - r.0) * rng.random::<f64>()
}

fn place<R: Rng + ?Sized>(rng: &mut R, size: f64, radius: f64) -> (f64, f64) {
    let lo = radius.min(size / 2.0);
    let hi = (size - radius).max(size / 2.0);
    (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
}

/// Draws a scene of class `label`.
pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SyntheticConfig, label: usize) -> SyntheticSceneSpec {
    let size = cfg.size as f64;
    let shape = ShapeKind::ALL[label / 2 % 4];
    let bg_hue = rng.random::<f64>();
    let background = [
        hsv(bg_hue, uniform(rng, (0.0, 0.35)), uniform(rng, (0.25, 0.75))),
        hsv(bg_hue + uniform(rng, (-0.15, 0.15)), uniform(rng, (0.0, 0.35)), uniform(rng, (0.25, 0.75))),
    ];
    let gradient_angle = uniform(rng, (0.0, std::f64::consts::TAU));
    let background_disparity = f32_exact(uniform(rng, cfg.background_disparity));
    let mut layers = Vec::new();
    if rng.random::<f64>() < cfg.distractor_prob {
        let radius = size * uniform(rng, cfg.distractor_radius);
        layers.push(SceneLayer {
            shape: ShapeKind::ALL[rng.random_range(0..4)],
            color: hsv(rng.random::<f64>(), uniform(rng, (0.3, 0.8)), uniform(rng, (0.4, 0.9))),
            disparity: f32_exact(uniform(rng, cfg.distractor_disparity)),
            center: place(rng, size, radius),
            radius,
            angle: uniform(rng, (0.0, std::f64::consts::TAU)),
        });
    }
    let hue = if label % 2 == 0 { uniform(rng, (-0.05, 0.12)) } else { uniform(rng, (0.5, 0.67)) };
    let radius = size * uniform(rng, cfg.object_radius);
    layers.push(SceneLayer {
        shape,
        color: hsv(hue, uniform(rng, (0.6, 1.0)), uniform(rng, (0.6, 1.0))),
        disparity: f32_exact(uniform(rng, cfg.object_disparity)),
        center: place(rng, size, radius),
        radius,
        angle: uniform(rng, (0.0, std::f64::consts::TAU)),
    });
    SyntheticSceneSpec {
        size: cfg.size,
        background,
        gradient_angle,
        background_disparity,
        noise: cfg.noise,
        noise_seed: rng.random(),
        layers,
        label,
    }
}

/// Rasterizes a scene at pixel centers; the depth map holds exactly the
/// disparity of the front-most layer at each pixel.
pub fn render_scene(spec: &SyntheticSceneSpec) -> (Image, DepthMap) {
    let n = spec.size;
    let (gs, gc) = spec.gradient_angle.sin_cos();
    let mut rgb = Array3::zeros((3, n, n));
    let mut depth = Array2::from_elem((n, n), spec.background_disparity);
    let mut noise_rng = stream(spec.noise_seed, &[]);
    let normal = rand_distr::Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((px / n as f64 - 0.5) * gc + (py / n as f64 - 0.5) * gs) + 0.75).clamp(0.0, 1.5) / 1.5;
            let mut color: [f64; 3] = std::array::from_fn(|c| spec.background[0][c] * (1.0 - t) + spec.background[1][c] * t);
            for layer in &spec.layers {
                let (dx, dy) = ((px - layer.center.0) / layer.radius, (py - layer.center.1) / layer.radius);
                if layer.shape.contains(dx, dy, layer.angle) {
                    color = layer.color;
                    depth[[y, x]] = layer.disparity;
                }
            }
            for (c, v) in color.iter().enumerate() {
                let jitter: f64 = rand_distr::Distribution::sample(&normal, &mut noise_rng);
                rgb[[c, y, x]] = (v + jitter).clamp(0.0, 1.0);
            }
        }
    }
    (rgb, DepthMap::new(depth).expect("disparities lie in [0, 1]"))
}

/// Writes `root/{train,val}/{class}/{index}.png` with exact `.dpt`
/// sidecars. Sample `i` has label `i mod 8`.
pub fn generate_synthetic_dataset(root: &Path, n_train: usize, n_val: usize, seed: u64, cfg: &SyntheticConfig) -> Result<()> {
    for (split_id, (split, count)) in [("train", n_train), ("val", n_val)].into_iter().enumerate() {
        for label in 0..SyntheticConfig::NUM_CLASSES {
            let dir = root.join(split).join(SyntheticConfig::class_name(label));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        for i in 0..count {
            let label = i % SyntheticConfig::NUM_CLASSES;
            let mut rng = stream(seed, &[tags::SYNTH, split_id as u64, i as u64]);
            let scene = sample_scene(&mut rng, cfg, label);
            let (rgb, depth) = render_scene(&scene);
            let path = root.join(split).join(SyntheticConfig::class_name(label)).join(format!("{i:05}.png"));
            save_png(&rgb, &path).map_err(img_err(&path))?;
            sidecar::write_depth(&path.with_extension("dpt"), &depth)?;
        }
    }
    Ok(())
}
