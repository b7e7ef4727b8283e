use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};

use super::{GeometryError, Result};

/// Color and coverage of one plane, without its depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneLayer {
    pub color: Array3<f64>,
    pub alpha: Array2<f64>,
}

/// Resamples `layer` into the target view. `h` maps target pixels to
/// source pixels. Color and alpha are sampled bilinearly; taps outside
/// the source frame contribute zero alpha and are dropped from the color
/// average.
pub fn warp_plane(layer: &PlaneLayer, h: &Matrix3<f64>) -> Result<PlaneLayer> {
    let scale = h.abs().max();
    let det = h.determinant();
    if !(scale > 0.0) || !det.is_finite() || det.abs() <= 1e-12 * scale.powi(3) {
        return Err(GeometryError::Domain("homography is not invertible".into()));
    }
    let (channels, height, width) = layer.color.dim();
    if layer.alpha.dim() != (height, width) {
        return Err(GeometryError::Shape("color and alpha sizes differ".into()));
    }
    let mut color = Array3::<f64>::zeros((channels, height, width));
    let mut alpha = Array2::<f64>::zeros((height, width));
    let mut acc = vec![0.0; channels];
    for y in 0..height {
        for x in 0..width {
            let p = h * Vector3::new(x as f64, y as f64, 1.0);
            if !(p.z > 1e-12) {
                continue;
            }
            let (sx, sy) = (p.x / p.z, p.y / p.z);
            if !sx.is_finite() || !sy.is_finite() {
                continue;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            acc.iter_mut().for_each(|v| *v = 0.0);
            let (mut a, mut wsum) = (0.0, 0.0);
            for (tx, ty, wt) in taps {
                if wt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= width as f64 || ty >= height as f64 {
                    continue;
                }
                let (ix, iy) = (tx as usize, ty as usize);
                a += wt * layer.alpha[[iy, ix]];
                wsum += wt;
                for (c, v) in acc.iter_mut().enumerate() {
                    *v += wt * layer.color[[c, iy, ix]];
                }
            }
            if wsum > 0.0 {
                alpha[[y, x]] = a.clamp(0.0, 1.0);
                for (c, v) in acc.iter().enumerate() {
                    color[[c, y, x]] = v / wsum;
                }
            }
        }
    }
    Ok(PlaneLayer { color, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_layer(h: usize, w: usize, seed: u64) -> PlaneLayer {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PlaneLayer {
            color: Array::from_shape_fn((3, h, w), |_| rng.random::<f64>()),
            alpha: Array::from_shape_fn((h, w), |_| rng.random::<f64>()),
        }
    }

    fn translation(dx: f64, dy: f64) -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0)
    }

    #[test]
    fn identity_is_bit_exact() {
        let layer = random_layer(5, 7, 1);
        assert_eq!(warp_plane(&layer, &Matrix3::identity()).unwrap(), layer);
    }

    #[test]
    fn integer_translation_shifts_columns() {
        let layer = random_layer(4, 6, 2);
        let out = warp_plane(&layer, &translation(1.0, 0.0)).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.alpha[[y, x]], layer.alpha[[y, x + 1]]);
                for c in 0..3 {
                    assert_eq!(out.color[[c, y, x]], layer.color[[c, y, x + 1]]);
                }
            }
            assert_eq!(out.alpha[[y, 5]], 0.0);
        }
    }

    #[test]
    fn half_pixel_shift_averages_step_edge() {
        let mut layer = PlaneLayer { color: Array3::zeros((3, 1, 4)), alpha: Array2::ones((1, 4)) };
        for x in 2..4 {
            for c in 0..3 {
                layer.color[[c, 0, x]] = 1.0;
            }
        }
        let out = warp_plane(&layer, &translation(0.5, 0.0)).unwrap();
        // Target pixel 1 samples source x = 1.5, between 0 and 1.
        assert!((out.color[[0, 0, 1]] - 0.5).abs() <= 1e-12);
        assert!((out.color[[0, 0, 0]] - 0.0).abs() <= 1e-12);
        assert!((out.color[[0, 0, 2]] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn singular_homography_is_rejected() {
        let layer = random_layer(2, 2, 3);
        let h = Matrix3::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(warp_plane(&layer, &h), Err(GeometryError::Domain(_))));
        assert!(warp_plane(&layer, &Matrix3::zeros()).is_err());
    }

    proptest! {
        // Translations and minifications never create coverage.
        #[test]
        fn warping_does_not_fabricate_alpha(
            seed in 0u64..5000,
            dx in -6.0..6.0f64,
            dy in -6.0..6.0f64,
            s in 1.0..2.0f64,
        ) {
            let layer = random_layer(9, 11, seed);
            let h = Matrix3::new(s, 0.0, dx, 0.0, s, dy, 0.0, 0.0, 1.0);
            let out = warp_plane(&layer, &h).unwrap();
            prop_assert!(out.alpha.sum() <= layer.alpha.sum() + 1e-9);
        }
    }
}
