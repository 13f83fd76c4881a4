use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat-panel fan-beam scanner rotating over a full circle.
///
/// The source sits at `source_to_center * (cos b, sin b)` for view angle `b`;
/// the detector is perpendicular to the central ray at distance
/// `detector_to_center` on the opposite side, with cell `j` centered at
/// offset `(j - (n-1)/2) * detector_width` along `(-sin b, cos b)`.
/// The reconstruction grid is `image_size x image_size` pixels covering a
/// square field of view of side `fov`, centered on the rotation axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub source_to_center: f64,
    pub detector_to_center: f64,
    pub n_detectors: usize,
    pub detector_width: f64,
    pub n_views: usize,
    pub fov: f64,
    pub image_size: usize,
}

impl FanBeamGeometry {
    /// 256x256 over 170 mm, 512 cells of 0.72 mm, 1024 views.
    pub fn full() -> Self {
        Self {
            source_to_center: 250.0,
            detector_to_center: 250.0,
            n_detectors: 512,
            detector_width: 0.72,
            n_views: 1024,
            fov: 170.0,
            image_size: 256,
        }
    }

    /// Scaled-down scanner for fast runs: 64x64, 128 cells, 180 views.
    /// Same physical field and detector span as [`FanBeamGeometry::full`].
    pub fn desk() -> Self {
        Self {
            source_to_center: 250.0,
            detector_to_center: 250.0,
            n_detectors: 128,
            detector_width: 0.72 * 4.0,
            n_views: 180,
            fov: 170.0,
            image_size: 64,
        }
    }

    pub fn with_image_size(mut self, n: usize) -> Self {
        self.image_size = n;
        self
    }

    pub fn with_views(mut self, n_views: usize) -> Self {
        self.n_views = n_views;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.source_to_center, "source_to_center")?;
        positive(self.detector_to_center, "detector_to_center")?;
        positive(self.detector_width, "detector_width")?;
        positive(self.fov, "fov")?;
        if self.n_views == 0 || self.n_detectors == 0 || self.image_size == 0 {
            return Err(Error::InvalidParameter(
                "n_views, n_detectors and image_size must be at least 1".into(),
            ));
        }
        // The whole grid must lie strictly between source and detector.
        if self.fov / 2.0 * std::f64::consts::SQRT_2 >= self.source_to_center {
            return Err(Error::InvalidParameter(format!(
                "field of view {} mm does not fit inside the source orbit",
                self.fov
            )));
        }
        Ok(())
    }

    pub fn pixel_size(&self) -> f64 {
        self.fov / self.image_size as f64
    }

    /// Evenly spaced over `[0, 2pi)`.
    pub fn view_angle(&self, v: usize) -> f64 {
        2.0 * PI * v as f64 / self.n_views as f64
    }

    pub fn view_angles(&self) -> Vec<f64> {
        (0..self.n_views).map(|v| self.view_angle(v)).collect()
    }

    /// Offset of detector cell `j` from the detector center, in mm.
    pub fn detector_offset(&self, j: usize) -> f64 {
        (j as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_width
    }

    pub fn source_to_detector(&self) -> f64 {
        self.source_to_center + self.detector_to_center
    }

    /// Source and detector-cell positions of ray `(v, j)`.
    pub fn ray_endpoints(&self, v: usize, j: usize) -> ([f64; 2], [f64; 2]) {
        let (sin, cos) = self.view_angle(v).sin_cos();
        let source = [self.source_to_center * cos, self.source_to_center * sin];
        let u = self.detector_offset(j);
        let cell = [
            -self.detector_to_center * cos - u * sin,
            -self.detector_to_center * sin + u * cos,
        ];
        (source, cell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        FanBeamGeometry::full().validate().unwrap();
        FanBeamGeometry::desk().validate().unwrap();
        assert_eq!(FanBeamGeometry::full().pixel_size(), 170.0 / 256.0);
    }

    #[test]
    fn angles_strictly_increasing_below_two_pi() {
        let g = FanBeamGeometry::desk();
        let a = g.view_angles();
        assert_eq!(a[0], 0.0);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        assert!(*a.last().unwrap() < 2.0 * PI);
    }

    #[test]
    fn rejects_bad_values() {
        let mut g = FanBeamGeometry::desk();
        g.detector_width = 0.0;
        assert!(g.validate().is_err());
        let mut g = FanBeamGeometry::desk();
        g.n_views = 0;
        assert!(g.validate().is_err());
        let mut g = FanBeamGeometry::desk();
        g.fov = 400.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn central_ray_passes_through_origin() {
        let mut g = FanBeamGeometry::desk();
        g.n_detectors = 129;
        let (s, d) = g.ray_endpoints(37, 64);
        // origin lies on segment s->d: cross product vanishes
        let cross = s[0] * d[1] - s[1] * d[0];
        assert!(cross.abs() < 1e-9);
    }
}
