//! Convolutional feature transform and filter banks.

mod activation;
mod bank;
mod conv;
mod transform;

pub use activation::{sigma, sigma_prime};
pub use bank::{FilterBank, TransposeReport, DEFAULT_ACTIVATION_DELTA, DEFAULT_CHANNELS, DEFAULT_LAYERS};
pub use conv::{ConvKernel, KAREA, KSIZE};
pub use transform::{apply_g, apply_g_raw, jacobian_t_apply, ActivationState, GradientMode};
