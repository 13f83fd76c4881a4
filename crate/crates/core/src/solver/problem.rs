//! Abstract objective pieces consumed by the solver, and small dense
//! surrogates for testing it without a projector.

use crate::ct::LinearFidelity;
use crate::error::{Error, Result};
use crate::features::GradientMode;
use crate::regularizers::Regularizer;

/// A smooth data term `f`.
pub trait Fidelity: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// `f(y) - f(x)`. Implementations should keep this accurate relative to
    /// the change itself; the solver's acceptance tests rely on it.
    fn value_change(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.value(y)? - self.value(x)?)
    }

    /// Largest eigenvalue of the Hessian of a quadratic `f`, by power
    /// iteration on `grad f(v) - grad f(0)` from a constant start.
    fn curvature_estimate(&self, iterations: usize) -> Result<f64> {
        let n = self.dim();
        let g0 = self.value_and_gradient(&vec![0.0; n])?.1;
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let (_, g) = self.value_and_gradient(&v)?;
            let hv: Vec<f64> = g.iter().zip(&g0).map(|(a, b)| a - b).collect();
            let nrm = hv.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Ok(0.0);
            }
            lambda = nrm;
            v = hv.iter().map(|a| a / nrm).collect();
        }
        Ok(lambda)
    }
}

/// Value and (optional) gradient of a smoothed regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedValue {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

/// A regularizer `r_eps` smoothed by `eps`.
pub trait SmoothedRegularizer: Sync {
    /// Number of locations `m` in the offset `m eps / 2`.
    fn locations(&self) -> usize;

    fn evaluate(&self, x: &[f64], eps: f64, gradient: Option<GradientMode>) -> Result<SmoothedValue>;

    /// `r_eps(y) - r_eps(x)`, see [`Fidelity::value_change`].
    fn value_change(&self, x: &[f64], y: &[f64], eps: f64) -> Result<f64> {
        Ok(self.evaluate(y, eps, None)?.value - self.evaluate(x, eps, None)?.value)
    }

    /// `r_{eps_new}(x) - r_{eps_old}(x)`.
    fn smoothing_change(&self, x: &[f64], eps_old: f64, eps_new: f64) -> Result<f64> {
        Ok(self.evaluate(x, eps_new, None)?.value - self.evaluate(x, eps_old, None)?.value)
    }
}

impl Fidelity for LinearFidelity {
    fn dim(&self) -> usize {
        self.n_pixels()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.value_raw(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.value_and_gradient_raw(x)
    }

    fn value_change(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.value_change_raw(x, y)
    }

    fn curvature_estimate(&self, iterations: usize) -> Result<f64> {
        Ok(self.projector().operator_norm_sq(iterations))
    }
}

impl SmoothedRegularizer for Regularizer {
    fn locations(&self) -> usize {
        Regularizer::locations(self)
    }

    fn evaluate(&self, x: &[f64], eps: f64, gradient: Option<GradientMode>) -> Result<SmoothedValue> {
        let e = Regularizer::evaluate(self, x, eps, gradient)?;
        Ok(SmoothedValue {
            value: e.value,
            gradient: e.gradient,
        })
    }

    fn value_change(&self, x: &[f64], y: &[f64], eps: f64) -> Result<f64> {
        Regularizer::value_change(self, x, y, eps)
    }

    fn smoothing_change(&self, x: &[f64], eps_old: f64, eps_new: f64) -> Result<f64> {
        Regularizer::smoothing_change(self, x, eps_old, eps_new)
    }
}

/// `f(x) = 1/2 ||A x - b||^2` with a dense row-major `A`.
#[derive(Debug, Clone)]
pub struct DenseLeastSquares {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl DenseLeastSquares {
    pub fn new(rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != rows * cols || b.len() != rows {
            return Err(Error::Shape(format!(
                "dense system {rows}x{cols} with {} entries and {} data",
                a.len(),
                b.len()
            )));
        }
        Ok(Self { rows, cols, a, b })
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.a[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - self.b[r]
            })
            .collect()
    }
}

impl Fidelity for DenseLeastSquares {
    fn dim(&self) -> usize {
        self.cols
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.cols {
            return Err(Error::Shape("dense fidelity: wrong input length".into()));
        }
        Ok(0.5 * self.residual(x).iter().map(|r| r * r).sum::<f64>())
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.cols {
            return Err(Error::Shape("dense fidelity: wrong input length".into()));
        }
        let r = self.residual(x);
        let mut g = vec![0.0; self.cols];
        for (row, rv) in r.iter().enumerate() {
            for (gc, a) in g.iter_mut().zip(&self.a[row * self.cols..(row + 1) * self.cols]) {
                *gc += a * rv;
            }
        }
        Ok((0.5 * r.iter().map(|v| v * v).sum::<f64>(), g))
    }
}

/// The zero regularizer on `locations` locations.
#[derive(Debug, Clone, Copy)]
pub struct ZeroRegularizer {
    pub locations: usize,
}

impl SmoothedRegularizer for ZeroRegularizer {
    fn locations(&self) -> usize {
        self.locations
    }

    fn evaluate(&self, x: &[f64], _eps: f64, gradient: Option<GradientMode>) -> Result<SmoothedValue> {
        Ok(SmoothedValue {
            value: 0.0,
            gradient: gradient.map(|_| vec![0.0; x.len()]),
        })
    }
}

/// Smoothed `weight * sum_i |x_i|` (one location per coordinate).
///
/// In inexact mode the gradient is multiplied by `inexact_gain`, standing in
/// for a wrong transpose.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedL1 {
    pub weight: f64,
    pub inexact_gain: f64,
    pub locations: usize,
}

impl SmoothedRegularizer for SmoothedL1 {
    fn locations(&self) -> usize {
        self.locations
    }

    fn evaluate(&self, x: &[f64], eps: f64, gradient: Option<GradientMode>) -> Result<SmoothedValue> {
        let value = self.weight * x.iter().map(|v| crate::regularizers::smoothed_norm(v.abs(), eps)).sum::<f64>();
        let gradient = gradient.map(|mode| {
            let gain = match mode {
                GradientMode::Exact => 1.0,
                GradientMode::Inexact => self.inexact_gain,
            };
            x.iter().map(|v| gain * self.weight * v / v.abs().max(eps)).collect()
        });
        Ok(SmoothedValue { value, gradient })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_gradient_and_curvature() {
        let f = DenseLeastSquares::new(2, 2, vec![2.0, 0.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let (v, g) = f.value_and_gradient(&[0.0, 0.0]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![-2.0, -1.0]);
        assert!((f.curvature_estimate(100).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn smoothed_l1_matches_branches() {
        let r = SmoothedL1 {
            weight: 2.0,
            inexact_gain: 1.0,
            locations: 2,
        };
        let e = SmoothedRegularizer::evaluate(&r, &[3.0, 0.05], 0.1, Some(GradientMode::Exact)).unwrap();
        assert!((e.value - 2.0 * (2.95 + 0.0125)).abs() < 1e-12);
        assert_eq!(e.gradient.unwrap(), vec![2.0, 1.0]);
    }
}
