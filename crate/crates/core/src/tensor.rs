//! Value containers shared by every stage of the pipeline.
//!
//! All containers are row-major `f64` buffers with their shape stored next to
//! the data. Constructors validate the shape and reject non-finite entries, so
//! a value that exists is always consistent.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// A 2-D attenuation map (1/mm), the optimization variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    pixel_size: f64,
    values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixel_size: f64, values: Vec<f64>) -> Result<Self> {
        if height * width != values.len() {
            return Err(Error::Shape(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pixel size must be positive, got {pixel_size}"
            )));
        }
        ensure_finite(&values, "image")?;
        Ok(Self {
            height,
            width,
            pixel_size,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, pixel_size: f64) -> Self {
        Self::new(height, width, pixel_size, vec![0.0; height * width])
            .expect("zero image is always valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Same grid, new payload.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, self.pixel_size, values)
    }

    pub fn same_grid(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Line-integral measurements, view-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    n_views: usize,
    n_detectors: usize,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_views: usize, n_detectors: usize, values: Vec<f64>) -> Result<Self> {
        if n_views * n_detectors != values.len() {
            return Err(Error::Shape(format!(
                "sinogram {n_views}x{n_detectors} needs {} values, got {}",
                n_views * n_detectors,
                values.len()
            )));
        }
        ensure_finite(&values, "sinogram")?;
        Ok(Self {
            n_views,
            n_detectors,
            values,
        })
    }

    pub fn zeros(n_views: usize, n_detectors: usize) -> Self {
        Self::new(n_views, n_detectors, vec![0.0; n_views * n_detectors])
            .expect("zero sinogram is always valid")
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn view(&self, v: usize) -> &[f64] {
        &self.values[v * self.n_detectors..(v + 1) * self.n_detectors]
    }
}

/// `d x m` feature matrix; column `i` is the descriptor at location `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    locations: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, locations: usize, values: Vec<f64>) -> Result<Self> {
        if channels * locations != values.len() {
            return Err(Error::Shape(format!(
                "feature map {channels}x{locations} needs {} values, got {}",
                channels * locations,
                values.len()
            )));
        }
        ensure_finite(&values, "feature map")?;
        Ok(Self {
            channels,
            locations,
            values,
        })
    }

    pub fn zeros(channels: usize, locations: usize) -> Self {
        Self {
            channels,
            locations,
            values: vec![0.0; channels * locations],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Channel `c` across all locations.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.locations..(c + 1) * self.locations]
    }

    pub fn at(&self, c: usize, i: usize) -> f64 {
        self.values[c * self.locations + i]
    }

    /// Euclidean norm of every descriptor column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.locations];
        for c in 0..self.channels {
            for (s, v) in sq.iter_mut().zip(self.channel(c)) {
                *s += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Scales column `i` by `scale[i]`.
    pub fn scale_columns(&self, scale: &[f64]) -> FeatureMap {
        assert_eq!(scale.len(), self.locations);
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.locations) {
            for (v, s) in row.iter_mut().zip(scale) {
                *v *= s;
            }
        }
        FeatureMap {
            channels: self.channels,
            locations: self.locations,
            values,
        }
    }
}

/// Nonlocal node matrix: `kappa` adjacent descriptors stacked into one column.
///
/// Row `j * d + c` of column `n` holds channel `c` of location `kappa * n + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedFeatureMap {
    base_channels: usize,
    fold_rate: usize,
    nodes: usize,
    values: Vec<f64>,
}

impl FoldedFeatureMap {
    pub fn new(base_channels: usize, fold_rate: usize, nodes: usize, values: Vec<f64>) -> Result<Self> {
        if fold_rate == 0 || base_channels * fold_rate * nodes != values.len() {
            return Err(Error::Shape(format!(
                "folded map ({}x{}) x {nodes} does not match {} values",
                fold_rate,
                base_channels,
                values.len()
            )));
        }
        ensure_finite(&values, "folded feature map")?;
        Ok(Self {
            base_channels,
            fold_rate,
            nodes,
            values,
        })
    }

    pub fn fold_rate(&self) -> usize {
        self.fold_rate
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    /// `kappa * d`.
    pub fn folded_channels(&self) -> usize {
        self.base_channels * self.fold_rate
    }

    /// `m / kappa`.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.values[q * self.nodes..(q + 1) * self.nodes]
    }

    /// Node descriptors as contiguous vectors (node-major copy).
    pub fn node_vectors(&self) -> Vec<f64> {
        let rows = self.folded_channels();
        let mut out = vec![0.0; rows * self.nodes];
        for q in 0..rows {
            for (n, v) in self.row(q).iter().enumerate() {
                out[n * rows + q] = *v;
            }
        }
        out
    }

    pub fn from_node_vectors(
        base_channels: usize,
        fold_rate: usize,
        nodes: usize,
        node_major: &[f64],
    ) -> Result<Self> {
        let rows = base_channels * fold_rate;
        if node_major.len() != rows * nodes {
            return Err(Error::Shape(format!(
                "node vectors: expected {} values, got {}",
                rows * nodes,
                node_major.len()
            )));
        }
        let mut values = vec![0.0; rows * nodes];
        for n in 0..nodes {
            for q in 0..rows {
                values[q * nodes + n] = node_major[n * rows + q];
            }
        }
        Self::new(base_channels, fold_rate, nodes, values)
    }
}

/// Stacks groups of `kappa` adjacent (row-major) descriptors into columns.
pub fn fold(f: &FeatureMap, kappa: usize) -> Result<FoldedFeatureMap> {
    let m = f.locations();
    if kappa == 0 || !m.is_multiple_of(kappa) {
        return Err(Error::FoldRate { kappa, locations: m });
    }
    let d = f.channels();
    let nodes = m / kappa;
    let mut values = vec![0.0; d * m];
    for j in 0..kappa {
        for c in 0..d {
            let src = f.channel(c);
            let dst = &mut values[(j * d + c) * nodes..(j * d + c + 1) * nodes];
            for (n, out) in dst.iter_mut().enumerate() {
                *out = src[kappa * n + j];
            }
        }
    }
    Ok(FoldedFeatureMap {
        base_channels: d,
        fold_rate: kappa,
        nodes,
        values,
    })
}

/// Inverse of [`fold`].
pub fn unfold(g: &FoldedFeatureMap) -> FeatureMap {
    let (d, kappa, nodes) = (g.base_channels, g.fold_rate, g.nodes);
    let m = kappa * nodes;
    let mut values = vec![0.0; d * m];
    for j in 0..kappa {
        for c in 0..d {
            let src = g.row(j * d + c);
            let dst = &mut values[c * m..(c + 1) * m];
            for (n, v) in src.iter().enumerate() {
                dst[kappa * n + j] = *v;
            }
        }
    }
    FeatureMap {
        channels: d,
        locations: m,
        values,
    }
}

/// Adjoint of [`fold`], mapping a gradient with respect to the folded matrix
/// back to the per-location layout. Folding is a permutation, so this is the
/// inverse permutation.
pub fn unfold_adjoint(g: &FoldedFeatureMap, channels: usize, locations: usize) -> Result<FeatureMap> {
    if g.base_channels != channels || g.fold_rate * g.nodes != locations {
        return Err(Error::Shape(format!(
            "folded gradient ({}x{}) x {} incompatible with feature map {channels}x{locations}",
            g.fold_rate, g.base_channels, g.nodes
        )));
    }
    Ok(unfold(g))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
