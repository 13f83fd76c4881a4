use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Reported PSNR when the images agree exactly.
pub const PSNR_CAP_DB: f64 = 200.0;

fn check_pair(x: &Image, reference: &Image) -> Result<()> {
    if x.height() != reference.height() || x.width() != reference.width() {
        return Err(Error::Shape(format!(
            "image {}x{} compared against reference {}x{}",
            x.height(),
            x.width(),
            reference.height(),
            reference.width()
        )));
    }
    Ok(())
}

fn resolve_peak(reference: &Image, peak: Option<f64>) -> Result<f64> {
    let p = peak.unwrap_or_else(|| reference.values().iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if p > 0.0 && p.is_finite() {
        Ok(p)
    } else {
        Err(Error::InvalidParameter(format!("peak must be positive, got {p}")))
    }
}

/// `10 log10(peak^2 / MSE)`, capped at 200 dB. `peak` defaults to the
/// reference maximum.
pub fn psnr(x: &Image, reference: &Image, peak: Option<f64>) -> Result<f64> {
    check_pair(x, reference)?;
    let peak = resolve_peak(reference, peak)?;
    let mse = x
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range; the reference maximum when absent.
    pub peak: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: None,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Separable "valid" filtering of a `h x w` field with `taps` on both axes.
fn filter_valid(v: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(t, g)| g * v[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(t, g)| g * rows[(r + t) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM over all fully contained Gaussian windows.
pub fn ssim(x: &Image, reference: &Image, params: &SsimParams) -> Result<f64> {
    check_pair(x, reference)?;
    let (h, w) = (x.height(), x.width());
    if params.window == 0 || h < params.window || w < params.window {
        return Err(Error::Shape(format!(
            "SSIM window {} does not fit a {h}x{w} image",
            params.window
        )));
    }
    if !(params.sigma > 0.0 && params.k1 > 0.0 && params.k2 > 0.0) {
        return Err(Error::InvalidParameter("SSIM sigma, k1 and k2 must be positive".into()));
    }
    let peak = resolve_peak(reference, params.peak)?;
    let taps = params.taps();
    let (a, b) = (x.values(), reference.values());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| f(*p, *q)).collect() };
    let (mx, _, _) = filter_valid(a, h, w, &taps);
    let (my, _, _) = filter_valid(b, h, w, &taps);
    let (mxx, _, _) = filter_valid(&prod(&|p, _| p * p), h, w, &taps);
    let (myy, _, _) = filter_valid(&prod(&|_, q| q * q), h, w, &taps);
    let (mxy, _, _) = filter_valid(&prod(&|p, q| p * q), h, w, &taps);
    let c1 = (params.k1 * peak).powi(2);
    let c2 = (params.k2 * peak).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-image scores plus their mean and standard deviation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rows: Vec<QualityRow>,
}

impl QualityReport {
    pub fn push(&mut self, image_id: impl Into<String>, x: &Image, reference: &Image, peak: Option<f64>) -> Result<()> {
        let params = SsimParams {
            peak,
            ..SsimParams::default()
        };
        self.rows.push(QualityRow {
            image_id: image_id.into(),
            psnr_db: psnr(x, reference, peak)?,
            ssim: ssim(x, reference, &params)?,
        });
        Ok(())
    }

    pub fn psnr_stats(&self) -> (f64, f64) {
        mean_std(&self.rows.iter().map(|r| r.psnr_db).collect::<Vec<_>>())
    }

    pub fn ssim_stats(&self) -> (f64, f64) {
        mean_std(&self.rows.iter().map(|r| r.ssim).collect::<Vec<_>>())
    }

    /// `image_id,psnr_db,ssim` rows, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,psnr_db,ssim\n");
        for r in &self.rows {
            writeln!(s, "{},{},{}", r.image_id, r.psnr_db, r.ssim).expect("writing to a String");
        }
        if !self.rows.is_empty() {
            let (pm, ps) = self.psnr_stats();
            let (sm, ss) = self.ssim_stats();
            writeln!(s, "mean,{pm},{sm}\nstd,{ps},{ss}").expect("writing to a String");
        }
        s
    }
}
