use crate::error::{Error, Result};
use crate::tensor::Image;

/// `(value, semi_x, semi_y, center_x, center_y, tilt_degrees)` on `[-1, 1]^2`,
/// the modified (high-contrast) Shepp-Logan set.
pub const SHEPP_LOGAN_ELLIPSES: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

pub const MIN_PHANTOM_SIZE: usize = 16;

/// Subsamples per pixel side when averaging the analytic phantom.
const SUPERSAMPLE: usize = 4;

/// Analytic phantom density at `(x, y)`, `y` pointing up.
pub fn shepp_logan_value(x: f64, y: f64) -> f64 {
    SHEPP_LOGAN_ELLIPSES
        .iter()
        .filter(|e| {
            let (s, c) = e[5].to_radians().sin_cos();
            let (dx, dy) = (x - e[3], y - e[4]);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            (u / e[1]).powi(2) + (v / e[2]).powi(2) <= 1.0
        })
        .map(|e| e[0])
        .sum()
}

/// `n x n` Shepp-Logan phantom with values in `[0, 1]`, each pixel the mean of
/// a 4x4 grid of point samples. Row 0 is the top edge; pixel size 1.
pub fn shepp_logan(n: usize) -> Result<Image> {
    if n < MIN_PHANTOM_SIZE {
        return Err(Error::InvalidParameter(format!(
            "phantom needs at least {MIN_PHANTOM_SIZE} pixels per side, got {n}"
        )));
    }
    let h = 2.0 / n as f64;
    let sub = h / SUPERSAMPLE as f64;
    let mut values = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let x0 = -1.0 + col as f64 * h;
            let y0 = 1.0 - row as f64 * h;
            let mut acc = 0.0;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let x = x0 + (b as f64 + 0.5) * sub;
                    let y = y0 - (a as f64 + 0.5) * sub;
                    acc += shepp_logan_value(x, y);
                }
            }
            // overlapping negative ellipses can dip a rounding error below 0
            values.push((acc / (SUPERSAMPLE * SUPERSAMPLE) as f64).clamp(0.0, 1.0));
        }
    }
    Image::new(n, n, 1.0, values)
}

/// Phantom on an `n x n` grid of the given pixel size, scaled so a density
/// of 1 maps to `mu_scale` attenuation per unit length.
pub fn scaled_phantom(n: usize, pixel_size: f64, mu_scale: f64) -> Result<Image> {
    if !(mu_scale > 0.0 && mu_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu_scale must be positive, got {mu_scale}")));
    }
    let p = shepp_logan(n)?;
    Image::new(n, n, pixel_size, p.values().iter().map(|v| v * mu_scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_sizes() {
        assert!(shepp_logan(15).is_err());
        assert!(shepp_logan(16).is_ok());
    }

    #[test]
    fn values_in_unit_interval_and_deterministic() {
        let a = shepp_logan(64).unwrap();
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, shepp_logan(64).unwrap());
        assert!(a.values().contains(&1.0));
    }

    #[test]
    fn outer_ellipse_mask_is_symmetric() {
        // the bright rim; interior values never exceed 0.4
        let n = 64;
        let p = shepp_logan(n).unwrap();
        for r in 0..n {
            for c in 0..n {
                assert_eq!(p.get(r, c) >= 0.5, p.get(r, n - 1 - c) >= 0.5, "({r},{c})");
            }
        }
    }

    #[test]
    fn center_pixel_matches_covering_ellipses() {
        // odd size puts a pixel on the origin; its subsamples stay within
        // 0.05 of it, clear of every ellipse boundary there
        let n = 65;
        let p = shepp_logan(n).unwrap();
        let covering: f64 = [1.0, -0.8].iter().sum();
        assert!((p.get(n / 2, n / 2) - covering).abs() < 1e-12);
        assert!((shepp_logan_value(0.0, 0.0) - covering).abs() < 1e-12);
        // inside the top ellipse and the small one under it
        assert!((shepp_logan_value(0.0, 0.12) - (1.0 - 0.8 + 0.1 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_matches_downsampled_fine_grid() {
        let coarse = shepp_logan(16).unwrap();
        let fine = shepp_logan(256).unwrap();
        let f = 16;
        let mut mad = 0.0;
        for r in 0..16 {
            for c in 0..16 {
                let mut acc = 0.0;
                for a in 0..f {
                    for b in 0..f {
                        acc += fine.get(r * f + a, c * f + b);
                    }
                }
                mad += (acc / (f * f) as f64 - coarse.get(r, c)).abs();
            }
        }
        mad /= 256.0;
        assert!(mad < 0.05, "mean absolute difference {mad}");
    }

    #[test]
    fn scaled_phantom_scales() {
        let p = scaled_phantom(32, 2.5, 0.1).unwrap();
        assert_eq!(p.pixel_size(), 2.5);
        let q = shepp_logan(32).unwrap();
        assert!(p.values().iter().zip(q.values()).all(|(a, b)| (a - 0.1 * b).abs() < 1e-15));
        assert!(scaled_phantom(32, 1.0, 0.0).is_err());
    }
}
