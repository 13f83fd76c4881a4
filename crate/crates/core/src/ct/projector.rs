//! Joseph-style ray-driven projector and its algebraic transpose.
//!
//! Each ray is stepped one pixel at a time along its dominant axis; at every
//! step the image is linearly interpolated between the two nearest pixels of
//! the other axis. Forward and back projection call the same ray walker, so
//! the back projector is the exact transpose of the forward one.

use rayon::prelude::*;

use super::geometry::FanBeamGeometry;
use crate::error::{Error, Result};
use crate::tensor::{dot, Image, Sinogram};

/// Views are summed into this many partial images during back projection.
/// Fixed so the reduction order does not depend on the thread count.
const BACKPROJECT_CHUNKS: usize = 16;

#[derive(Debug, Clone)]
pub struct Projector {
    geometry: FanBeamGeometry,
    trig: Vec<(f64, f64)>,
}

impl Projector {
    pub fn new(geometry: FanBeamGeometry) -> Result<Self> {
        geometry.validate()?;
        let trig = geometry.view_angles().into_iter().map(f64::sin_cos).collect();
        Ok(Self { geometry, trig })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geometry
    }

    pub fn image_size(&self) -> usize {
        self.geometry.image_size
    }

    pub fn n_rays(&self) -> usize {
        self.geometry.n_views * self.geometry.n_detectors
    }

    fn check_image(&self, x: &Image) -> Result<()> {
        let n = self.geometry.image_size;
        if x.height() != n || x.width() != n {
            return Err(Error::Shape(format!(
                "geometry expects a {n}x{n} image, got {}x{}",
                x.height(),
                x.width()
            )));
        }
        let p = self.geometry.pixel_size();
        if (x.pixel_size() - p).abs() > 1e-9 * p {
            return Err(Error::Shape(format!(
                "image pixel size {} mm inconsistent with field of view ({p} mm per pixel)",
                x.pixel_size()
            )));
        }
        Ok(())
    }

    fn check_sinogram(&self, s: &Sinogram) -> Result<()> {
        let g = &self.geometry;
        if s.n_views() != g.n_views || s.n_detectors() != g.n_detectors {
            return Err(Error::Shape(format!(
                "geometry expects a {}x{} sinogram, got {}x{}",
                g.n_views,
                g.n_detectors,
                s.n_views(),
                s.n_detectors()
            )));
        }
        Ok(())
    }

    /// Calls `visit(pixel_index, weight)` for every interpolation weight of
    /// ray `(v, j)`, in a fixed order.
    pub fn walk_ray(&self, v: usize, j: usize, mut visit: impl FnMut(usize, f64)) {
        let g = &self.geometry;
        let n = g.image_size;
        let p = g.pixel_size();
        let (sin, cos) = self.trig[v];
        let s = [g.source_to_center * cos, g.source_to_center * sin];
        let u = g.detector_offset(j);
        let e = [
            -g.detector_to_center * cos - u * sin,
            -g.detector_to_center * sin + u * cos,
        ];
        let d = [e[0] - s[0], e[1] - s[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let half = (n as f64 - 1.0) / 2.0;

        if d[0].abs() >= d[1].abs() {
            // Step over columns; interpolate between rows.
            let step = p * len / d[0].abs();
            let slope = d[1] / d[0];
            for c in 0..n {
                let x = (c as f64 - half) * p;
                let y = s[1] + (x - s[0]) * slope;
                let r = half - y / p;
                let r0 = r.floor();
                let frac = r - r0;
                let r0 = r0 as isize;
                if r0 >= 0 && (r0 as usize) < n {
                    visit(r0 as usize * n + c, step * (1.0 - frac));
                }
                if r0 + 1 >= 0 && ((r0 + 1) as usize) < n {
                    visit((r0 + 1) as usize * n + c, step * frac);
                }
            }
        } else {
            // Step over rows; interpolate between columns.
            let step = p * len / d[1].abs();
            let slope = d[0] / d[1];
            for r in 0..n {
                let y = (half - r as f64) * p;
                let x = s[0] + (y - s[1]) * slope;
                let c = x / p + half;
                let c0 = c.floor();
                let frac = c - c0;
                let c0 = c0 as isize;
                if c0 >= 0 && (c0 as usize) < n {
                    visit(r * n + c0 as usize, step * (1.0 - frac));
                }
                if c0 + 1 >= 0 && ((c0 + 1) as usize) < n {
                    visit(r * n + (c0 + 1) as usize, step * frac);
                }
            }
        }
    }

    pub fn forward(&self, x: &Image) -> Result<Sinogram> {
        self.check_image(x)?;
        Sinogram::new(self.geometry.n_views, self.geometry.n_detectors, self.forward_raw(x.values()))
    }

    pub(crate) fn forward_raw(&self, x: &[f64]) -> Vec<f64> {
        let nd = self.geometry.n_detectors;
        let mut out = vec![0.0; self.n_rays()];
        out.par_chunks_mut(nd).enumerate().for_each(|(v, row)| {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                self.walk_ray(v, j, |idx, w| acc += w * x[idx]);
                *cell = acc;
            }
        });
        out
    }

    pub fn back(&self, s: &Sinogram) -> Result<Image> {
        self.check_sinogram(s)?;
        let n = self.geometry.image_size;
        Image::new(n, n, self.geometry.pixel_size(), self.back_raw(s.values()))
    }

    pub(crate) fn back_raw(&self, s: &[f64]) -> Vec<f64> {
        let n = self.geometry.image_size;
        let nv = self.geometry.n_views;
        let nd = self.geometry.n_detectors;
        let per_chunk = nv.div_ceil(BACKPROJECT_CHUNKS);
        let partials: Vec<Vec<f64>> = (0..BACKPROJECT_CHUNKS)
            .into_par_iter()
            .map(|chunk| {
                let mut img = vec![0.0; n * n];
                let end = ((chunk + 1) * per_chunk).min(nv);
                for v in chunk * per_chunk..end {
                    for j in 0..nd {
                        let val = s[v * nd + j];
                        if val != 0.0 {
                            self.walk_ray(v, j, |idx, w| img[idx] += w * val);
                        }
                    }
                }
                img
            })
            .collect();
        let mut out = vec![0.0; n * n];
        for part in &partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        out
    }

    /// Largest eigenvalue of `A^T A` by power iteration from a constant start.
    pub fn operator_norm_sq(&self, iterations: usize) -> f64 {
        let n = self.geometry.image_size;
        let mut v = vec![1.0 / n as f64; n * n];
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            let w = self.back_raw(&self.forward_raw(&v));
            let nrm = dot(&w, &w).sqrt();
            lambda = dot(&v, &w) / dot(&v, &v);
            if nrm == 0.0 {
                return 0.0;
            }
            v = w.into_iter().map(|x| x / nrm).collect();
        }
        lambda
    }
}

pub fn forward_project(x: &Image, geo: &FanBeamGeometry) -> Result<Sinogram> {
    Projector::new(geo.clone())?.forward(x)
}

pub fn back_project(s: &Sinogram, geo: &FanBeamGeometry) -> Result<Image> {
    Projector::new(geo.clone())?.back(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn odd_geometry() -> FanBeamGeometry {
        let mut g = FanBeamGeometry::desk().with_image_size(33);
        g.n_detectors = 129;
        g.n_views = 8;
        g
    }

    /// Line integral of a pixel-indicator image by dense sampling along the
    /// source-to-cell segment.
    fn sampled_line_integral(
        g: &FanBeamGeometry,
        img: &Image,
        v: usize,
        j: usize,
        samples: usize,
        half_window: f64,
    ) -> f64 {
        let (s, e) = g.ray_endpoints(v, j);
        let d = [e[0] - s[0], e[1] - s[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let p = g.pixel_size();
        let n = g.image_size as f64;
        let half_fov = g.fov / 2.0;
        // sample a window of the segment centered where it passes the origin
        let t_mid = g.source_to_center / g.source_to_detector();
        let t_half = half_window / len;
        let (t0, t1) = (t_mid - t_half, t_mid + t_half);
        let dt = (t1 - t0) / samples as f64;
        let mut acc = 0.0;
        for k in 0..samples {
            let t = t0 + (k as f64 + 0.5) * dt;
            let x = s[0] + t * d[0];
            let y = s[1] + t * d[1];
            let c = ((x + half_fov) / p).floor();
            let r = ((half_fov - y) / p).floor();
            if c >= 0.0 && r >= 0.0 && c < n && r < n {
                acc += img.get(r as usize, c as usize) * dt * len;
            }
        }
        acc
    }

    #[test]
    fn zero_in_zero_out() {
        let g = FanBeamGeometry::desk().with_image_size(16);
        let p = Projector::new(g.clone()).unwrap();
        let s = p.forward(&Image::zeros(16, 16, g.pixel_size())).unwrap();
        assert!(s.values().iter().all(|v| *v == 0.0));
        let b = p.back(&Sinogram::zeros(g.n_views, g.n_detectors)).unwrap();
        assert!(b.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn center_pixel_chord_matches_dense_sampling() {
        let g = odd_geometry();
        let n = g.image_size;
        let mut vals = vec![0.0; n * n];
        vals[(n / 2) * n + n / 2] = 1.0;
        let img = Image::new(n, n, g.pixel_size(), vals).unwrap();
        let sino = forward_project(&img, &g).unwrap();
        let center = g.n_detectors / 2;
        // view 0 is axis-aligned, view 1 is the 45 degree diagonal
        for v in [0, 1, 2, 4] {
            let oracle = sampled_line_integral(&g, &img, v, center, 10_000, 2.0 * g.pixel_size());
            let got = sino.view(v)[center];
            assert!(
                (got - oracle).abs() <= 1e-3 * oracle,
                "view {v}: projector {got}, sampled {oracle}"
            );
        }
    }

    #[test]
    fn uniform_disk_central_chord() {
        let g = FanBeamGeometry::desk();
        let n = g.image_size;
        let p = g.pixel_size();
        let radius = 60.0;
        let density = 0.02;
        // 8x8 supersampled pixel coverage
        let vals: Vec<f64> = (0..n * n)
            .map(|k| {
                let (r, c) = (k / n, k % n);
                let mut inside = 0;
                for a in 0..8 {
                    for b in 0..8 {
                        let x = (c as f64 + (b as f64 + 0.5) / 8.0) * p - g.fov / 2.0;
                        let y = g.fov / 2.0 - (r as f64 + (a as f64 + 0.5) / 8.0) * p;
                        if x * x + y * y <= radius * radius {
                            inside += 1;
                        }
                    }
                }
                density * inside as f64 / 64.0
            })
            .collect();
        let img = Image::new(n, n, p, vals).unwrap();
        let sino = forward_project(&img, &g).unwrap();
        let expected = 2.0 * radius * density;
        // even detector count: the two cells straddling the center
        let nd = g.n_detectors;
        for v in [0, 17, 45, 90] {
            let mid = 0.5 * (sino.view(v)[nd / 2 - 1] + sino.view(v)[nd / 2]);
            assert!((mid - expected).abs() <= 0.01 * expected, "view {v}: {mid} vs {expected}");
        }
    }

    #[test]
    fn adjoint_identity_random_pairs() {
        let g = FanBeamGeometry::desk().with_image_size(32);
        let p = Projector::new(g.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..p.n_rays()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax = p.forward_raw(&x);
            let aty = p.back_raw(&y);
            let lhs = dot(&ax, &y);
            let rhs = dot(&x, &aty);
            let scale = dot(&ax, &ax).sqrt() * dot(&y, &y).sqrt();
            assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn impulse_backprojects_onto_ray_pixels_only() {
        let g = FanBeamGeometry::desk().with_image_size(32);
        let p = Projector::new(g.clone()).unwrap();
        let (v, j) = (23, 70);
        let mut s = vec![0.0; p.n_rays()];
        s[v * g.n_detectors + j] = 1.0;
        let img = p.back_raw(&s);
        // independent ray trace: pixels whose square is within one pixel of the line
        let (a, b) = g.ray_endpoints(v, j);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let px = g.pixel_size();
        let n = g.image_size;
        for r in 0..n {
            for c in 0..n {
                let x = (c as f64 - (n as f64 - 1.0) / 2.0) * px;
                let y = ((n as f64 - 1.0) / 2.0 - r as f64) * px;
                let dist = ((x - a[0]) * d[1] - (y - a[1]) * d[0]).abs() / len;
                if img[r * n + c] != 0.0 {
                    assert!(dist < px * std::f64::consts::SQRT_2, "pixel ({r},{c}) at distance {dist}");
                }
                if dist < 0.25 * px {
                    assert!(img[r * n + c] > 0.0, "pixel ({r},{c}) on the ray got no weight");
                }
            }
        }
    }

    #[test]
    fn forward_is_linear() {
        let g = FanBeamGeometry::desk().with_image_size(16);
        let p = Projector::new(g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
        let (alpha, beta) = (0.7, -2.3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = p.forward_raw(&mix);
        let ax = p.forward_raw(&x);
        let ay = p.forward_raw(&y);
        for ((l, a), b) in lhs.iter().zip(&ax).zip(&ay) {
            let rhs = alpha * a + beta * b;
            assert!((l - rhs).abs() <= 1e-12 * (alpha * a).abs().max((beta * b).abs()).max(1e-300));
        }
    }

    #[test]
    fn deterministic_under_thread_pools() {
        let g = FanBeamGeometry::desk().with_image_size(24);
        let p = Projector::new(g).unwrap();
        let s: Vec<f64> = (0..p.n_rays()).map(|k| ((k * 7919) % 101) as f64 / 101.0).collect();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| p.back_raw(&s));
        let b = many.install(|| p.back_raw(&s));
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let g = FanBeamGeometry::desk().with_image_size(16);
        let p = Projector::new(g.clone()).unwrap();
        assert!(p.forward(&Image::zeros(8, 8, g.pixel_size())).is_err());
        assert!(p.forward(&Image::zeros(16, 16, 1.0)).is_err());
        assert!(p.back(&Sinogram::zeros(3, 3)).is_err());
    }
}
