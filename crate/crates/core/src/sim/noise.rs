use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::tensor::Sinogram;

/// Photon counts below this are raised to it before the logarithm.
pub const CLAMP_FLOOR: f64 = 1.0;

/// Transmission noise: `I = Poisson(I0 exp(-b)) + N(0, sigma_e2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseModel {
    #[serde(rename = "I0")]
    pub i0: f64,
    pub sigma_e2: f64,
    pub seed: u64,
}

impl DoseModel {
    pub fn new(i0: f64, sigma_e2: f64, seed: u64) -> Result<Self> {
        let d = Self { i0, sigma_e2, seed };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::InvalidParameter(format!("dose I0 must be positive, got {}", self.i0)));
        }
        if !(self.sigma_e2 >= 0.0 && self.sigma_e2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "electronic noise variance must be nonnegative, got {}",
                self.sigma_e2
            )));
        }
        Ok(())
    }

    /// Generator for element `index`: ChaCha8 keyed by the seed, stream
    /// selected by the index, so draws do not depend on evaluation order.
    fn element_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Raw detected intensity for element `index` with noiseless count `mean`
    /// (before clamping). Poisson draws use `rand_distr`'s sampler.
    pub fn sample_intensity(&self, mean: f64, index: u64) -> f64 {
        let mut rng = self.element_rng(index);
        let counts = if mean > 0.0 {
            Poisson::new(mean).expect("finite positive mean").sample(&mut rng)
        } else {
            0.0
        };
        let electronic = if self.sigma_e2 > 0.0 {
            Normal::new(0.0, self.sigma_e2.sqrt()).expect("finite deviation").sample(&mut rng)
        } else {
            0.0
        };
        counts + electronic
    }
}

/// Noisy log-transformed measurement `ln(I0 / max(I, 1))` for each element
/// of the clean line integrals.
pub fn simulate_noisy_sinogram(clean: &Sinogram, dose: &DoseModel) -> Result<Sinogram> {
    dose.validate()?;
    ensure_finite(clean.values(), "clean sinogram")?;
    if let Some(v) = clean.values().iter().find(|v| **v < 0.0) {
        return Err(Error::InvalidParameter(format!("clean line integrals must be nonnegative, found {v}")));
    }
    let values: Vec<f64> = clean
        .values()
        .par_iter()
        .enumerate()
        .map(|(i, &b)| {
            let intensity = dose.sample_intensity(dose.i0 * (-b).exp(), i as u64);
            (dose.i0 / intensity.max(CLAMP_FLOOR)).ln()
        })
        .collect();
    Sinogram::new(clean.n_views(), clean.n_detectors(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, m2, m4)
    }

    #[test]
    fn dose_moments_at_one_million_photons() {
        let dose = DoseModel::new(1e6, 10.0, 11).unwrap();
        let n = 1_000_000u64;
        let xs: Vec<f64> = (0..n).into_par_iter().map(|i| dose.sample_intensity(1e6, i)).collect();
        let (mean, var, m4) = moments(&xs);
        assert!((mean - 1e6).abs() / 1e6 < 0.005);
        assert!((var - (1e6 + 10.0)).abs() / (1e6 + 10.0) < 0.02);
        let se_mean = (var / n as f64).sqrt();
        let se_var = ((m4 - var * var) / n as f64).sqrt();
        assert!((mean - 1e6).abs() <= 3.0 * se_mean, "mean {mean}");
        assert!((var - 1e6 - 10.0).abs() <= 3.0 * se_var, "variance {var}");
    }

    #[test]
    fn attenuated_moments() {
        let dose = DoseModel::new(5e4, 10.0, 5).unwrap();
        let b: f64 = 2.0;
        let lam = 5e4 * (-b).exp();
        let n = 200_000u64;
        let xs: Vec<f64> = (0..n).into_par_iter().map(|i| dose.sample_intensity(lam, i)).collect();
        let (mean, var, m4) = moments(&xs);
        assert!((mean - lam).abs() <= 3.0 * (var / n as f64).sqrt());
        assert!((var - lam - 10.0).abs() <= 3.0 * ((m4 - var * var) / n as f64).sqrt());
    }

    #[test]
    fn log_mean_converges_with_dose() {
        let clean = Sinogram::new(1, 2000, vec![1.5; 2000]).unwrap();
        let mut prev = f64::INFINITY;
        for i0 in [1e4, 1e5, 1e6, 1e7, 1e8] {
            let noisy = simulate_noisy_sinogram(&clean, &DoseModel::new(i0, 0.0, 3).unwrap()).unwrap();
            let bias = (noisy.values().iter().sum::<f64>() / 2000.0 - 1.5).abs();
            let sd = (1.5f64.exp() / i0).sqrt() / (2000f64).sqrt();
            assert!(bias < 4.0 * sd + 1.0 / i0 * 1.5f64.exp(), "I0 {i0}: bias {bias}");
            prev = prev.min(bias);
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn deterministic_and_order_free() {
        let clean = Sinogram::new(4, 8, (0..32).map(|i| i as f64 * 0.1).collect()).unwrap();
        let dose = DoseModel::new(2.5e4, 10.0, 7).unwrap();
        let a = simulate_noisy_sinogram(&clean, &dose).unwrap();
        let b = simulate_noisy_sinogram(&clean, &dose).unwrap();
        assert_eq!(a, b);
        // element 5 alone reproduces its value in the batch
        let lone = dose.sample_intensity(2.5e4 * (-0.5f64).exp(), 5);
        assert_eq!(a.values()[5], (2.5e4 / lone.max(CLAMP_FLOOR)).ln());
        let other = simulate_noisy_sinogram(&clean, &DoseModel::new(2.5e4, 10.0, 8).unwrap()).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn clamps_starved_rays() {
        let clean = Sinogram::new(1, 64, vec![30.0; 64]).unwrap();
        let noisy = simulate_noisy_sinogram(&clean, &DoseModel::new(2.5e4, 10.0, 1).unwrap()).unwrap();
        assert!(noisy.values().iter().all(|v| v.is_finite() && *v <= (2.5e4f64).ln() + 1e-12));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(DoseModel::new(0.0, 10.0, 1).is_err());
        assert!(DoseModel::new(1e5, -1.0, 1).is_err());
        let neg = Sinogram::new(1, 1, vec![-0.1]).unwrap();
        assert!(simulate_noisy_sinogram(&neg, &DoseModel::new(1e5, 0.0, 1).unwrap()).is_err());
    }
}
