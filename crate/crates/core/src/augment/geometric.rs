use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::photometric::BaseRecipe;
use super::{AugmentError, Result};
use crate::geometry::DepthMap;
use crate::imageio::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Geometry shared by the RGB and depth channels of one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometricParams {
    pub crop: CropRect,
    pub flip: bool,
    pub out_size: usize,
}

impl GeometricParams {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            crop: CropRect { top: 0, left: 0, height, width },
            flip: false,
            out_size: width,
        }
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        let c = &self.crop;
        if c.height == 0 || c.width == 0 || c.top + c.height > height || c.left + c.width > width || self.out_size == 0 {
            return Err(AugmentError::Invalid(format!(
                "crop {c:?} / out_size {} invalid for a {height}x{width} frame",
                self.out_size
            )));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random-resized-crop parameters: area fraction from `recipe.crop_scale`,
/// log-uniform aspect from `recipe.crop_ratio`, ten attempts, falling back
/// to the full frame.
pub fn sample_geometric<R: Rng + ?Sized>(rng: &mut R, source: (usize, usize), recipe: &BaseRecipe) -> GeometricParams {
    let (height, width) = source;
    let area = (height * width) as f64;
    let (r0, r1) = (recipe.crop_ratio.0.ln(), recipe.crop_ratio.1.ln());
    let mut crop = CropRect { top: 0, left: 0, height, width };
    for _ in 0..10 {
        let target = area * uniform(rng, recipe.crop_scale.0, recipe.crop_scale.1);
        let ratio = uniform(rng, r0, r1).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.random_range(0..=height - h);
            let left = rng.random_range(0..=width - w);
            crop = CropRect { top, left, height: h, width: w };
            break;
        }
    }
    let flip = rng.random::<f64>() < recipe.flip_prob;
    GeometricParams { crop, flip, out_size: recipe.out_size }
}

/// Bilinear resize of a single channel (half-pixel centers, edge clamp).
pub fn resize_bilinear(src: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.to_owned();
    }
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let coords = |o: usize, scale: f64, n: usize| {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coords(x, sx, w)).collect();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (y0, y1, fy) = coords(y, sy, h);
        let (x0, x1, fx) = xs[x];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn transform_channel(chan: ArrayView2<f64>, p: &GeometricParams) -> Array2<f64> {
    let c = &p.crop;
    let cropped = chan.slice(ndarray::s![c.top..c.top + c.height, c.left..c.left + c.width]);
    let mut out = resize_bilinear(cropped, p.out_size, p.out_size);
    if p.flip {
        out.invert_axis(Axis(1));
        out = out.as_standard_layout().into_owned();
    }
    out
}

/// Applies the same crop, resize and flip to `rgb` and `depth`.
pub fn apply_paired(rgb: &Image, depth: Option<&DepthMap>, params: &GeometricParams) -> Result<(Image, Option<DepthMap>)> {
    let (channels, h, w) = rgb.dim();
    if let Some(d) = depth {
        if d.dim() != (h, w) {
            return Err(AugmentError::Shape(format!("rgb is {h}x{w}, depth is {:?}", d.dim())));
        }
    }
    params.validate(h, w)?;
    let mut out = Array3::<f64>::zeros((channels, params.out_size, params.out_size));
    for (c, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        dst.assign(&transform_channel(rgb.index_axis(Axis(0), c), params));
    }
    let depth = depth
        .map(|d| DepthMap::new(transform_channel(d.values().view(), params).mapv(|v| v.clamp(0.0, 1.0))))
        .transpose()
        .map_err(|e| AugmentError::Invalid(e.to_string()))?;
    Ok((out, depth))
}
