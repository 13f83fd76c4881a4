use super::projector::Projector;
use crate::error::{Error, Result};
use crate::tensor::{Image, Sinogram};

/// Least-squares data term `f(x) = 0.5 * ||A x - b||^2`.
#[derive(Debug, Clone)]
pub struct LinearFidelity {
    projector: Projector,
    data: Sinogram,
}

impl LinearFidelity {
    pub fn new(projector: Projector, data: Sinogram) -> Result<Self> {
        let g = projector.geometry();
        if data.n_views() != g.n_views || data.n_detectors() != g.n_detectors {
            return Err(Error::Shape(format!(
                "data {}x{} does not match geometry {}x{}",
                data.n_views(),
                data.n_detectors(),
                g.n_views,
                g.n_detectors
            )));
        }
        Ok(Self { projector, data })
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn data(&self) -> &Sinogram {
        &self.data
    }

    pub fn n_pixels(&self) -> usize {
        let n = self.projector.image_size();
        n * n
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_pixels() {
            return Err(Error::Shape(format!(
                "fidelity expects {} pixels, got {}",
                self.n_pixels(),
                x.len()
            )));
        }
        Ok(())
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.projector.forward_raw(x);
        for (ri, bi) in r.iter_mut().zip(self.data.values()) {
            *ri -= bi;
        }
        r
    }

    pub fn value_raw(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let r = self.residual(x);
        Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
    }

    pub fn gradient_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient_raw(x)?.1)
    }

    pub fn value_and_gradient_raw(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let r = self.residual(x);
        let value = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        Ok((value, self.projector.back_raw(&r)))
    }

    /// `f(y) - f(x)` as `<A d, A (x + y)/2 - b>` with `d = y - x`, accurate
    /// relative to the change itself rather than to `f`.
    pub fn value_change_raw(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let ad = self.projector.forward_raw(&d);
        let ry = self.residual(y);
        Ok(ad.iter().zip(&ry).map(|(p, r)| p * (r - 0.5 * p)).sum())
    }

    pub fn value(&self, x: &Image) -> Result<f64> {
        self.value_raw(x.values())
    }

    pub fn gradient(&self, x: &Image) -> Result<Image> {
        x.with_values(self.gradient_raw(x.values())?)
    }
}

/// `0.5 * ||A x - b||^2`.
pub fn fidelity_value(x: &Image, fid: &LinearFidelity) -> Result<f64> {
    fid.value(x)
}

/// `A^T (A x - b)`.
pub fn grad_fidelity(x: &Image, fid: &LinearFidelity) -> Result<Image> {
    fid.gradient(x)
}
