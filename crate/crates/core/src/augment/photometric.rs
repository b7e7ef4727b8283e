use ndarray::{Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, Result};
use crate::imageio::{luma, Image};

/// The base 2D SSL recipe (SimCLR-style).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseRecipe {
    /// Output side length in pixels.
    pub out_size: usize,
    /// Crop area as a fraction of the frame.
    pub crop_scale: (f64, f64),
    /// Crop aspect ratio (width / height).
    pub crop_ratio: (f64, f64),
    pub flip_prob: f64,
    pub jitter_prob: f64,
    /// Color-jitter strength `s`: brightness, contrast and saturation
    /// factors span `0.8 s`, hue spans `0.2 s`.
    pub jitter_strength: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for BaseRecipe {
    fn default() -> Self {
        Self {
            out_size: 32,
            crop_scale: (0.2, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            jitter_prob: 0.8,
            jitter_strength: 0.5,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
        }
    }
}

impl BaseRecipe {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (s0, s1) = self.crop_scale;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= 1.0) {
            problems.push(format!("crop_scale {:?} must lie in (0, 1]", self.crop_scale));
        }
        let (r0, r1) = self.crop_ratio;
        if !(r0 > 0.0 && r0 <= r1) {
            problems.push(format!("crop_ratio {:?} invalid", self.crop_ratio));
        }
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.out_size == 0 {
            problems.push("out_size must be positive".into());
        }
        if !(self.jitter_strength >= 0.0) || !(self.blur_sigma.0 > 0.0 && self.blur_sigma.0 <= self.blur_sigma.1) {
            problems.push("jitter_strength / blur_sigma invalid".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AugmentError::Invalid(problems.join("; ")))
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn blend(img: &mut Image, other: &Image, factor: f64) {
    Zip::from(img).and(other).for_each(|a, &b| *a = (factor * *a + (1.0 - factor) * b).clamp(0.0, 1.0));
}

fn adjust_brightness(img: &mut Image, f: f64) {
    img.mapv_inplace(|v| (v * f).clamp(0.0, 1.0));
}

fn adjust_contrast(img: &mut Image, f: f64) {
    let mean = luma(img).mean().unwrap_or(0.0);
    let flat = Image::from_elem(img.dim(), mean);
    blend(img, &flat, f);
}

fn adjust_saturation(img: &mut Image, f: f64) {
    let gray = gray_stack(&luma(img));
    blend(img, &gray, f);
}

fn gray_stack(l: &Array2<f64>) -> Image {
    let (h, w) = l.dim();
    Image::from_shape_fn((3, h, w), |(_, y, x)| l[[y, x]])
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn adjust_hue(img: &mut Image, shift: f64) {
    let (_, h, w) = img.dim();
    for y in 0..h {
        for x in 0..w {
            let (hh, s, v) = rgb_to_hsv(img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]);
            let (r, g, b) = hsv_to_rgb(hh + shift, s, v);
            img[[0, y, x]] = r;
            img[[1, y, x]] = g;
            img[[2, y, x]] = b;
        }
    }
}

fn gaussian_kernel(sigma: f64, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// Separable gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64, size: usize) -> Image {
    let kernel = gaussian_kernel(sigma, size);
    let r = (size / 2) as isize;
    let (c, h, w) = img.dim();
    let mut tmp = Image::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                tmp[[ch, y, x]] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * img[[ch, y, reflect(x as isize + k as isize - r, w)]])
                    .sum();
            }
        }
    }
    let mut out = Image::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[ch, y, x]] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[[ch, reflect(y as isize + k as isize - r, h), x]])
                    .sum();
            }
        }
    }
    out
}

/// Color jitter, random grayscale and gaussian blur, each gated by its
/// probability. Operates on RGB only.
pub fn apply_photometric<R: Rng + ?Sized>(rgb: &Image, recipe: &BaseRecipe, rng: &mut R) -> Image {
    let mut img = rgb.clone();
    if rng.random::<f64>() < recipe.jitter_prob {
        let s = recipe.jitter_strength;
        let (bcs, hue) = (0.8 * s, 0.2 * s);
        let b = uniform(rng, (1.0 - bcs).max(0.0), 1.0 + bcs);
        let c = uniform(rng, (1.0 - bcs).max(0.0), 1.0 + bcs);
        let sat = uniform(rng, (1.0 - bcs).max(0.0), 1.0 + bcs);
        let hshift = uniform(rng, -hue, hue);
        let mut order = [0u8, 1, 2, 3];
        order.shuffle(rng);
        for op in order {
            match op {
                0 => adjust_brightness(&mut img, b),
                1 => adjust_contrast(&mut img, c),
                2 => adjust_saturation(&mut img, sat),
                _ => adjust_hue(&mut img, hshift),
            }
        }
    }
    if rng.random::<f64>() < recipe.grayscale_prob {
        img = gray_stack(&luma(&img));
    }
    if rng.random::<f64>() < recipe.blur_prob {
        let sigma = uniform(rng, recipe.blur_sigma.0, recipe.blur_sigma.1);
        let side = img.len_of(Axis(1)).max(img.len_of(Axis(2)));
        let size = (((side as f64 * 0.1).round() as usize) | 1).max(3);
        img = gaussian_blur(&img, sigma, size);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array;

    fn random_image(seed: u64) -> Image {
        let mut rng = stream(seed, &[]);
        Array::from_shape_fn((3, 8, 8), |_| rng.random::<f64>())
    }

    #[test]
    fn hsv_round_trip() {
        for (r, g, b) in [(0.2, 0.4, 0.9), (1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.1, 0.8, 0.3)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn disabled_recipe_is_identity() {
        let r = BaseRecipe { jitter_prob: 0.0, grayscale_prob: 0.0, blur_prob: 0.0, ..Default::default() };
        let img = random_image(1);
        assert_eq!(apply_photometric(&img, &r, &mut stream(0, &[])), img);
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let r = BaseRecipe { jitter_prob: 1.0, grayscale_prob: 0.5, blur_prob: 1.0, ..Default::default() };
        let mut rng = stream(4, &[]);
        for s in 0..20 {
            let out = apply_photometric(&random_image(s), &r, &mut rng);
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::from_elem((3, 5, 5), 0.3);
        let out = gaussian_blur(&img, 1.5, 3);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn recipe_validation() {
        assert!(BaseRecipe::default().validate().is_ok());
        assert!(BaseRecipe { crop_scale: (0.0, 1.0), ..Default::default() }.validate().is_err());
        assert!(BaseRecipe { flip_prob: 2.0, ..Default::default() }.validate().is_err());
    }
}
