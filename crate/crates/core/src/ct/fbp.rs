//! Filtered back projection for the equispaced flat-detector fan beam.
//!
//! Projections are rebinned onto a virtual detector through the rotation
//! center, cosine weighted, ramp filtered, then back projected with the
//! `1/U^2` distance weight. The full-scan redundancy is removed with a
//! factor one half.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::geometry::FanBeamGeometry;
use crate::error::{Error, Result};
use crate::tensor::{Image, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FbpFilter {
    /// Band-limited ramp.
    #[default]
    RamLak,
    /// Ramp apodized by a Hann window reaching zero at Nyquist.
    Hann,
}

impl std::str::FromStr for FbpFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ram-lak" | "ramlak" => Ok(FbpFilter::RamLak),
            "hann" => Ok(FbpFilter::Hann),
            other => Err(Error::InvalidParameter(format!("unknown FBP filter {other:?}"))),
        }
    }
}

/// Frequency response of the discrete ramp, sampled on an `n_fft` grid.
fn ramp_response(n_fft: usize, spacing: f64, filter: FbpFilter) -> Vec<f64> {
    // Spatial Ram-Lak kernel: 1/(4 d^2) at 0, -1/(k pi d)^2 at odd k.
    let mut kernel = vec![Complex::new(0.0, 0.0); n_fft];
    kernel[0].re = 1.0 / (4.0 * spacing * spacing);
    for k in (1..n_fft / 2).step_by(2) {
        let v = -1.0 / ((k as f64 * PI * spacing).powi(2));
        kernel[k].re = v;
        kernel[n_fft - k].re = v;
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let f = k.min(n_fft - k) as f64 / (n_fft as f64 / 2.0);
            let window = match filter {
                FbpFilter::RamLak => 1.0,
                FbpFilter::Hann => 0.5 * (1.0 + (PI * f).cos()),
            };
            c.re * window
        })
        .collect()
}

pub fn fbp(s: &Sinogram, geo: &FanBeamGeometry, filter: FbpFilter) -> Result<Image> {
    geo.validate()?;
    if s.n_views() != geo.n_views || s.n_detectors() != geo.n_detectors {
        return Err(Error::Shape(format!(
            "sinogram {}x{} does not match geometry {}x{}",
            s.n_views(),
            s.n_detectors(),
            geo.n_views,
            geo.n_detectors
        )));
    }
    if geo.n_views < 2 {
        return Err(Error::InvalidParameter("FBP needs at least 2 views".into()));
    }
    let nd = geo.n_detectors;
    let sad = geo.source_to_center;
    let mag = sad / geo.source_to_detector();
    let ds = geo.detector_width * mag;
    let virtual_offsets: Vec<f64> = (0..nd).map(|j| geo.detector_offset(j) * mag).collect();
    let cosine: Vec<f64> = virtual_offsets
        .iter()
        .map(|s| sad / (sad * sad + s * s).sqrt())
        .collect();

    let n_fft = (2 * nd).next_power_of_two();
    let response = ramp_response(n_fft, ds, filter);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    let mut filtered = vec![0.0; geo.n_views * nd];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for v in 0..geo.n_views {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (j, (p, w)) in s.view(v).iter().zip(&cosine).enumerate() {
            buf[j].re = p * w;
        }
        fwd.process(&mut buf);
        for (c, h) in buf.iter_mut().zip(&response) {
            *c *= h;
        }
        inv.process(&mut buf);
        let scale = ds / n_fft as f64;
        for j in 0..nd {
            filtered[v * nd + j] = buf[j].re * scale;
        }
    }

    let n = geo.image_size;
    let px = geo.pixel_size();
    let half = (n as f64 - 1.0) / 2.0;
    let dbeta = 2.0 * PI / geo.n_views as f64;
    let s0 = virtual_offsets[0];
    let mut out = vec![0.0; n * n];
    for v in 0..geo.n_views {
        let (sin, cos) = geo.view_angle(v).sin_cos();
        let q = &filtered[v * nd..(v + 1) * nd];
        for r in 0..n {
            let y = (half - r as f64) * px;
            for c in 0..n {
                let x = (c as f64 - half) * px;
                let along = x * cos + y * sin;
                let across = -x * sin + y * cos;
                let u = (sad - along) / sad;
                let s_virtual = across / u;
                let t = (s_virtual - s0) / ds;
                let t0 = t.floor();
                if t0 < 0.0 || t0 as usize + 1 >= nd {
                    continue;
                }
                let i = t0 as usize;
                let frac = t - t0;
                let val = q[i] * (1.0 - frac) + q[i + 1] * frac;
                out[r * n + c] += val / (u * u);
            }
        }
    }
    let scale = 0.5 * dbeta;
    out.iter_mut().for_each(|o| *o *= scale);
    Image::new(n, n, px, out)
}
