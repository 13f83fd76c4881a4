//! Smoothed sparsity and nonlocal graph regularizers.

mod graph;
mod objective;
mod sparsity;

pub use graph::{
    median_bandwidth, GraphMode, GraphStorage, NodeGrid, SimilarityGraph, DEFAULT_SAMPLE_BUDGET,
    DEFAULT_WINDOW_RADIUS, DENSE_NODE_LIMIT,
};
pub use objective::{Regularizer, RegularizerConfig, RegularizerEval, SmoothingState, StorageChoice};
pub use sparsity::{
    l21_norm, shifted_location_terms, shifted_smoothed_norm, smoothed_norm, smoothed_norm_change, sparsity_change,
    sparsity_cotangent, sparsity_grad, sparsity_value,
};

use crate::ct::LinearFidelity;
use crate::error::Result;
use crate::features::GradientMode;
use crate::tensor::{FoldedFeatureMap, Image};

/// `sum_{i<j} W_ij ||g_i - g_j||^2` over the folded descriptors.
pub fn nonlocal_value(fg: &FoldedFeatureMap, graph: &SimilarityGraph) -> Result<f64> {
    graph.pair_sum(&fg.node_vectors(), fg.folded_channels())
}

/// `grad r-(x)` alone (without `lambda`), using the regularizer's graph mode.
pub fn nonlocal_grad(x: &Image, reg: &Regularizer) -> Result<Image> {
    x.with_values(reg.nonlocal_gradient(x.values(), GradientMode::Exact)?)
}

/// `phi_eps(x) = f(x) + r_eps(x)` and its gradient.
pub fn phi_eps(x: &Image, fid: &LinearFidelity, reg: &Regularizer, state: &SmoothingState) -> Result<(f64, Image)> {
    let (fv, mut fg) = fid.value_and_gradient_raw(x.values())?;
    let r = reg.evaluate(x.values(), state.eps, Some(GradientMode::Exact))?;
    for (a, b) in fg.iter_mut().zip(r.gradient.expect("requested")) {
        *a += b;
    }
    Ok((fv + r.value, x.with_values(fg)?))
}
