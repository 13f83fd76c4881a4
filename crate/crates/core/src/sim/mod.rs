//! Phantom, transmission-noise simulation and image-quality metrics.

mod metrics;
mod noise;
mod phantom;

pub use metrics::{mean_std, psnr, ssim, QualityReport, QualityRow, SsimParams, PSNR_CAP_DB};
pub use noise::{simulate_noisy_sinogram, DoseModel, CLAMP_FLOOR};
pub use phantom::{scaled_phantom, shepp_logan, shepp_logan_value, MIN_PHANTOM_SIZE, SHEPP_LOGAN_ELLIPSES};
