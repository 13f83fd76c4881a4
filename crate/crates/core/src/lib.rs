//! Low-dose fan-beam CT reconstruction with a smoothed learned-descent solver.

pub mod ct;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod io;
pub mod regularizers;
pub mod sim;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{fold, unfold, unfold_adjoint, FeatureMap, FoldedFeatureMap, Image, Sinogram};
