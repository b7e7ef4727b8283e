//! Float image helpers. Images are `(3, H, W)` arrays in `[0, 1]`.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use ndarray::{Array2, Array3};

pub type Image = Array3<f64>;

pub fn load_png(path: &Path) -> image::ImageResult<Image> {
    let img = image::open(path)?.to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Image {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

pub fn to_rgb8(img: &Image) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (_, h, w) = img.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| quantize(img[[c, y as usize, x as usize]]);
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(img: &Image, path: &Path) -> image::ImageResult<()> {
    to_rgb8(img).save_with_format(path, image::ImageFormat::Png)
}

/// Rounds every value to the nearest representable 8-bit level.
pub fn quantize_image(img: &Image) -> Image {
    img.mapv(|v| quantize(v) as f64 / 255.0)
}

/// Per-channel mean color.
pub fn mean_color(img: &Image) -> [f64; 3] {
    let n = (img.dim().1 * img.dim().2).max(1) as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = img.index_axis(ndarray::Axis(0), c).sum() / n;
    }
    out
}

/// ITU-R 601 luma.
pub fn luma(img: &Image) -> Array2<f64> {
    let (_, h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
    })
}
