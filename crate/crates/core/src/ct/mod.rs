//! Fan-beam scanner model: projector pair, data term and FBP initializer.

mod fbp;
mod fidelity;
mod geometry;
mod projector;

pub use fbp::{fbp, FbpFilter};
pub use fidelity::{fidelity_value, grad_fidelity, LinearFidelity};
pub use geometry::FanBeamGeometry;
pub use projector::{back_project, forward_project, Projector};
