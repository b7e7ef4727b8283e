use std::fmt;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use ndarray::{Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::imageio::{from_rgb8, to_rgb8, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Noise,
    Blur,
    Weather,
    Digital,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Noise, Category::Blur, Category::Weather, Category::Digital];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Noise => "noise",
            Category::Blur => "blur",
            Category::Weather => "weather",
            Category::Digital => "digital",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    Brightness,
    Contrast,
    Pixelate,
    Jpeg,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 9] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
        CorruptionKind::Jpeg,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::Jpeg => "jpeg",
        }
    }

    pub fn category(&self) -> Category {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise => Category::Noise,
            DefocusBlur | MotionBlur => Category::Blur,
            Brightness | Contrast => Category::Weather,
            Pixelate | Jpeg => Category::Digital,
        }
    }

    /// Severity schedule, indexed by `severity - 1`. Blur sizes are in
    /// pixels for a 32-pixel side and scale linearly with image size.
    pub fn schedule(&self) -> [f64; 5] {
        use CorruptionKind::*;
        match self {
            GaussianNoise => [0.04, 0.06, 0.08, 0.09, 0.10],
            ShotNoise => [500.0, 250.0, 100.0, 75.0, 50.0],
            ImpulseNoise => [0.01, 0.02, 0.03, 0.05, 0.07],
            DefocusBlur => [0.75, 1.0, 1.5, 2.0, 2.5],
            MotionBlur => [2.0, 3.0, 4.0, 5.0, 6.0],
            Brightness => [0.05, 0.1, 0.15, 0.2, 0.3],
            Contrast => [0.75, 0.5, 0.4, 0.3, 0.15],
            Pixelate => [0.95, 0.9, 0.85, 0.75, 0.65],
            Jpeg => [80.0, 65.0, 58.0, 50.0, 40.0],
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EvalError::Config(format!("unknown corruption kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        let s = Self { kind, severity };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(EvalError::Config(format!("severity {} outside 1..=5", self.severity)));
        }
        Ok(())
    }

    pub fn parameter(&self) -> f64 {
        self.kind.schedule()[self.severity as usize - 1]
    }

    /// Every kind at every severity.
    pub fn full_grid() -> Vec<CorruptionSpec> {
        CorruptionKind::ALL.iter().flat_map(|&kind| (1..=5).map(move |severity| CorruptionSpec { kind, severity })).collect()
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.severity)
    }
}

/// Applies `spec` at its scheduled strength.
pub fn corrupt<R: Rng + ?Sized>(img: &Image, spec: &CorruptionSpec, rng: &mut R) -> Result<Image> {
    spec.validate()?;
    let p = spec.parameter();
    let side = img.dim().1.min(img.dim().2) as f64 / 32.0;
    Ok(match spec.kind {
        CorruptionKind::GaussianNoise => gaussian_noise(img, p, rng),
        CorruptionKind::ShotNoise => shot_noise(img, p, rng),
        CorruptionKind::ImpulseNoise => impulse_noise(img, p, rng),
        CorruptionKind::DefocusBlur => defocus_blur(img, p * side),
        CorruptionKind::MotionBlur => {
            let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            motion_blur(img, p * side, angle)
        }
        CorruptionKind::Brightness => brightness(img, p),
        CorruptionKind::Contrast => contrast(img, p),
        CorruptionKind::Pixelate => pixelate(img, p),
        CorruptionKind::Jpeg => jpeg(img, p.round() as u8)?,
    })
}

/// `clip(x + sigma * N(0, 1))`, independently per value.
pub fn gaussian_noise<R: Rng + ?Sized>(img: &Image, sigma: f64, rng: &mut R) -> Image {
    img.mapv(|v| {
        let n: f64 = StandardNormal.sample(rng);
        (v + sigma * n).clamp(0.0, 1.0)
    })
}

/// `clip(Poisson(x * lambda) / lambda)`.
pub fn shot_noise<R: Rng + ?Sized>(img: &Image, lambda: f64, rng: &mut R) -> Image {
    img.mapv(|v| {
        let rate = v.clamp(0.0, 1.0) * lambda;
        if rate <= 0.0 {
            return 0.0;
        }
        let k: f64 = Poisson::new(rate).expect("positive rate").sample(rng);
        (k / lambda).clamp(0.0, 1.0)
    })
}

/// Salt-and-pepper noise: each value is replaced with probability `amount`,
/// by 0 or 1 with equal odds.
pub fn impulse_noise<R: Rng + ?Sized>(img: &Image, amount: f64, rng: &mut R) -> Image {
    img.mapv(|v| {
        let hit = rng.random::<f64>() < amount;
        let salt = rng.random::<bool>();
        if hit {
            if salt { 1.0 } else { 0.0 }
        } else {
            v
        }
    })
}

fn convolve(img: &Image, taps: &[(isize, isize, f64)]) -> Image {
    let (c, h, w) = img.dim();
    let total: f64 = taps.iter().map(|t| t.2).sum();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let mut acc = 0.0;
        for &(dy, dx, wt) in taps {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            acc += wt * img[[ch, yy, xx]];
        }
        (acc / total).clamp(0.0, 1.0)
    })
}

/// Disk blur with anti-aliased rim weights `clamp(r + 0.5 - dist, 0, 1)`.
pub fn defocus_blur(img: &Image, radius: f64) -> Image {
    let reach = (radius + 0.5).ceil() as isize;
    let mut taps = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = ((dy * dy + dx * dx) as f64).sqrt();
            let wt = (radius + 0.5 - d).clamp(0.0, 1.0);
            if wt > 0.0 {
                taps.push((dy, dx, wt));
            }
        }
    }
    convolve(img, &taps)
}

/// Averages bilinear samples along a centred segment of `length` pixels at
/// `angle` radians.
pub fn motion_blur(img: &Image, length: f64, angle: f64) -> Image {
    let (c, h, w) = img.dim();
    let n = length.ceil().max(1.0) as usize + 1;
    let (dx, dy) = (angle.cos(), angle.sin());
    let offsets: Vec<f64> = (0..n).map(|i| length * (i as f64 / (n - 1) as f64 - 0.5)).collect();
    let sample = |ch: usize, y: f64, x: f64| {
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = img[[ch, y0, x0]] * (1.0 - fx) + img[[ch, y0, x1]] * fx;
        let bot = img[[ch, y1, x0]] * (1.0 - fx) + img[[ch, y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    };
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let s: f64 = offsets.iter().map(|&t| sample(ch, y as f64 + t * dy, x as f64 + t * dx)).sum();
        (s / n as f64).clamp(0.0, 1.0)
    })
}

/// Adds `delta` to the HSV value channel, keeping hue and saturation.
pub fn brightness(img: &Image, delta: f64) -> Image {
    let (_, h, w) = img.dim();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let v = (0..3).map(|c| img[[c, y, x]]).fold(0.0, f64::max);
            let nv = (v + delta).clamp(0.0, 1.0);
            for c in 0..3 {
                out[[c, y, x]] = if v > 0.0 { img[[c, y, x]] * (nv / v) } else { nv };
            }
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    out
}

/// Scales deviations from the per-channel mean by `factor`.
pub fn contrast(img: &Image, factor: f64) -> Image {
    let mut out = img.clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        let m = ch.mean().unwrap_or(0.0);
        ch.mapv_inplace(|v| ((v - m) * factor + m).clamp(0.0, 1.0));
    }
    out
}

/// Box-downsamples to `factor` of the size and upsamples by replication.
pub fn pixelate(img: &Image, factor: f64) -> Image {
    let (c, h, w) = img.dim();
    let hs = ((h as f64 * factor).round() as usize).clamp(1, h);
    let ws = ((w as f64 * factor).round() as usize).clamp(1, w);
    let cy = |y: usize| y * hs / h;
    let cx = |x: usize| x * ws / w;
    let mut sums = Array3::<f64>::zeros((c, hs, ws));
    let mut counts = ndarray::Array2::<f64>::zeros((hs, ws));
    for y in 0..h {
        for x in 0..w {
            counts[[cy(y), cx(x)]] += 1.0;
            for ch in 0..c {
                sums[[ch, cy(y), cx(x)]] += img[[ch, y, x]];
            }
        }
    }
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| sums[[ch, cy(y), cx(x)]] / counts[[cy(y), cx(x)]])
}

/// Round trip through a baseline JPEG encoder at `quality` (1..=100).
pub fn jpeg(img: &Image, quality: u8) -> Result<Image> {
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100)).encode_image(&to_rgb8(img))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(from_rgb8(&decoded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn natural(h: usize, w: usize) -> Image {
        Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            let t = (y as f64 * 0.3 + c as f64).sin() * (x as f64 * 0.2).cos();
            0.5 + 0.35 * t
        })
    }

    fn psnr(a: &Image, b: &Image) -> f64 {
        let mse = (a - b).mapv(|v| v * v).mean().unwrap();
        -10.0 * mse.log10()
    }

    #[test]
    fn gaussian_psnr_decreases_with_severity() {
        let img = natural(32, 32);
        let ps: Vec<f64> = (1..=5)
            .map(|s| {
                let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, s).unwrap();
                psnr(&img, &corrupt(&img, &spec, &mut stream(3, &[])).unwrap())
            })
            .collect();
        assert!(ps.windows(2).all(|w| w[1] < w[0]), "{ps:?}");
    }

    #[test]
    fn zero_brightness_is_identity() {
        let img = natural(8, 9);
        assert_eq!(brightness(&img, 0.0), img);
        assert_eq!(brightness(&Array3::zeros((3, 2, 2)), 0.0), Array3::<f64>::zeros((3, 2, 2)));
    }

    #[test]
    fn full_impulse_is_binary() {
        let out = impulse_noise(&natural(10, 10), 1.0, &mut stream(0, &[]));
        assert!(out.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn every_kind_is_bounded_and_deterministic() {
        let img = natural(16, 16);
        for spec in CorruptionSpec::full_grid() {
            let a = corrupt(&img, &spec, &mut stream(9, &[1])).unwrap();
            let b = corrupt(&img, &spec, &mut stream(9, &[1])).unwrap();
            assert_eq!(a, b, "{spec}");
            assert_eq!(a.dim(), img.dim());
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)), "{spec}");
        }
    }

    #[test]
    fn severity_and_names_are_checked() {
        assert!(CorruptionSpec::new(CorruptionKind::Jpeg, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Jpeg, 6).is_err());
        assert!("fog".parse::<CorruptionKind>().is_err());
        for k in CorruptionKind::ALL {
            assert_eq!(k.as_str().parse::<CorruptionKind>().unwrap(), k);
        }
        assert!(serde_json::from_str::<CorruptionSpec>(r#"{"kind":"frost","severity":1}"#).is_err());
    }

    #[test]
    fn pixelate_makes_constant_blocks() {
        let img = natural(8, 8);
        let out = pixelate(&img, 0.5);
        assert_eq!(out[[0, 0, 0]], out[[0, 1, 1]]);
        let mean = (img[[0, 0, 0]] + img[[0, 0, 1]] + img[[0, 1, 0]] + img[[0, 1, 1]]) / 4.0;
        assert!((out[[0, 0, 0]] - mean).abs() < 1e-12);
    }

    #[test]
    fn blurs_preserve_constants() {
        let img = Array3::from_elem((3, 6, 6), 0.4);
        for out in [defocus_blur(&img, 1.5), motion_blur(&img, 3.0, 0.7)] {
            assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-12));
        }
    }
}
