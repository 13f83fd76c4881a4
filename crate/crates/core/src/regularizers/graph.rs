//! Gaussian similarity graphs over folded descriptors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FoldedFeatureMap;

/// Node count above which `GraphStorage::Auto` switches to a window.
pub const DENSE_NODE_LIMIT: usize = 4096;
pub const DEFAULT_WINDOW_RADIUS: usize = 8;
pub const DEFAULT_SAMPLE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    /// `W` follows the iterate; the gradient uses the `W~` weights.
    Exact,
    /// `W` is built once at the initial image and held fixed.
    #[default]
    Frozen,
}

impl std::str::FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "frozen" => Ok(Self::Frozen),
            other => Err(Error::InvalidParameter(format!("unknown graph mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum GraphStorage {
    /// Every pair of nodes is connected.
    Dense,
    /// Only nodes within a square window (Chebyshev radius, in node units)
    /// on the node grid are connected.
    Windowed { radius: usize },
}

impl GraphStorage {
    /// Dense up to [`DENSE_NODE_LIMIT`] nodes, windowed beyond.
    pub fn auto(n_nodes: usize, radius: usize) -> Self {
        if n_nodes <= DENSE_NODE_LIMIT {
            Self::Dense
        } else {
            Self::Windowed { radius }
        }
    }
}

/// Spatial arrangement of the nodes, used by windowed storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeGrid {
    pub rows: usize,
    pub cols: usize,
}

impl NodeGrid {
    /// Node layout of an `h x w` image folded at rate `kappa`. When `kappa`
    /// divides `w` every image row yields `w / kappa` nodes; otherwise the
    /// nodes are laid out as a single line in scan order.
    pub fn for_image(h: usize, w: usize, kappa: usize) -> Self {
        if kappa > 0 && w.is_multiple_of(kappa) {
            Self { rows: h, cols: w / kappa }
        } else {
            Self { rows: 1, cols: h * w / kappa.max(1) }
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
enum Adjacency {
    Dense {
        w: Vec<f64>,
        wt: Option<Vec<f64>>,
    },
    Sparse {
        offsets: Vec<usize>,
        cols: Vec<u32>,
        w: Vec<f64>,
        wt: Option<Vec<f64>>,
    },
}

/// `W_ij = exp(-||g_i - g_j||^2 / bw^2)` over the stored pairs, the degree
/// `D` and, optionally, `W~_ij = W_ij (1 - ||g_i - g_j||^2 / bw^2)`.
///
/// The diagonal is never stored; it cancels in `L = D - W`.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    n_nodes: usize,
    bandwidth: f64,
    storage: GraphStorage,
    adjacency: Adjacency,
    degree: Vec<f64>,
    exact_degree: Option<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median pairwise Euclidean distance between node descriptors; exact when
/// the pair count fits in `sample_budget`, otherwise over that many pairs
/// drawn uniformly with a seeded generator.
///
/// If the median is zero while some descriptors differ, the median of the
/// positive distances is returned so the bandwidth stays usable.
pub fn median_bandwidth(fg: &FoldedFeatureMap, sample_budget: usize, seed: u64) -> Result<f64> {
    let n = fg.nodes();
    if n < 2 {
        return Err(Error::InvalidParameter("bandwidth needs at least two nodes".into()));
    }
    let dim = fg.folded_channels();
    let nodes = fg.node_vectors();
    let node = |i: usize| &nodes[i * dim..(i + 1) * dim];
    let pairs = n * (n - 1) / 2;
    let dists: Vec<f64> = if pairs <= sample_budget.max(1) {
        (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| sq_dist(node(i), node(j)).sqrt())
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..sample_budget)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                sq_dist(node(i), node(j)).sqrt()
            })
            .collect()
    };
    let med = median(dists.clone());
    if med > 0.0 {
        return Ok(med);
    }
    let mut positive: Vec<f64> = dists.into_iter().filter(|d| *d > 0.0).collect();
    if positive.is_empty() {
        positive = (1..n).map(|j| sq_dist(node(0), node(j)).sqrt()).filter(|d| *d > 0.0).collect();
    }
    if positive.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(median(positive))
}

impl SimilarityGraph {
    /// Builds the graph from folded features. `grid` is only consulted for
    /// windowed storage and must have `fg.nodes()` cells.
    pub fn build(
        fg: &FoldedFeatureMap,
        bandwidth: f64,
        storage: GraphStorage,
        grid: NodeGrid,
        with_exact_weights: bool,
    ) -> Result<Self> {
        let nodes = fg.node_vectors();
        Self::build_from_nodes(&nodes, fg.folded_channels(), bandwidth, storage, grid, with_exact_weights)
    }

    /// As [`SimilarityGraph::build`], from node-major descriptors of length `dim`.
    pub fn build_from_nodes(
        nodes: &[f64],
        dim: usize,
        bandwidth: f64,
        storage: GraphStorage,
        grid: NodeGrid,
        with_exact_weights: bool,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if dim == 0 || !nodes.len().is_multiple_of(dim) {
            return Err(Error::Shape("node descriptors are not a whole number of vectors".into()));
        }
        let n = nodes.len() / dim;
        let node = |i: usize| &nodes[i * dim..(i + 1) * dim];
        let inv_bw2 = 1.0 / (bandwidth * bandwidth);
        let weight = |i: usize, j: usize| {
            let s = sq_dist(node(i), node(j)) * inv_bw2;
            let w = (-s).exp();
            (w, w * (1.0 - s))
        };

        let (adjacency, degree, exact_degree) = match storage {
            GraphStorage::Dense => {
                let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut w = vec![0.0; n];
                        let mut wt = vec![0.0; if with_exact_weights { n } else { 0 }];
                        for j in (0..n).filter(|&j| j != i) {
                            let (a, b) = weight(i, j);
                            w[j] = a;
                            if with_exact_weights {
                                wt[j] = b;
                            }
                        }
                        (w, wt)
                    })
                    .collect();
                let degree = rows.iter().map(|(w, _)| w.iter().sum()).collect();
                let exact_degree =
                    with_exact_weights.then(|| rows.iter().map(|(_, wt)| wt.iter().sum()).collect());
                let mut w = Vec::with_capacity(n * n);
                let mut wt = Vec::with_capacity(if with_exact_weights { n * n } else { 0 });
                for (a, b) in rows {
                    w.extend(a);
                    wt.extend(b);
                }
                (
                    Adjacency::Dense {
                        w,
                        wt: with_exact_weights.then_some(wt),
                    },
                    degree,
                    exact_degree,
                )
            }
            GraphStorage::Windowed { radius } => {
                if grid.len() != n {
                    return Err(Error::Shape(format!(
                        "node grid {}x{} does not hold {n} nodes",
                        grid.rows, grid.cols
                    )));
                }
                let r = radius as isize;
                let rows: Vec<Vec<(u32, f64, f64)>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let (ri, ci) = ((i / grid.cols) as isize, (i % grid.cols) as isize);
                        let mut out = Vec::new();
                        for rj in (ri - r).max(0)..=(ri + r).min(grid.rows as isize - 1) {
                            for cj in (ci - r).max(0)..=(ci + r).min(grid.cols as isize - 1) {
                                let j = rj as usize * grid.cols + cj as usize;
                                if j != i {
                                    let (a, b) = weight(i, j);
                                    out.push((j as u32, a, b));
                                }
                            }
                        }
                        out
                    })
                    .collect();
                let mut offsets = Vec::with_capacity(n + 1);
                offsets.push(0);
                let (mut cols, mut w, mut wt) = (Vec::new(), Vec::new(), Vec::new());
                let mut degree = Vec::with_capacity(n);
                let mut exact_degree = Vec::with_capacity(n);
                for row in rows {
                    degree.push(row.iter().map(|e| e.1).sum());
                    exact_degree.push(row.iter().map(|e| e.2).sum());
                    for (j, a, b) in row {
                        cols.push(j);
                        w.push(a);
                        wt.push(b);
                    }
                    offsets.push(cols.len());
                }
                (
                    Adjacency::Sparse {
                        offsets,
                        cols,
                        w,
                        wt: with_exact_weights.then_some(wt),
                    },
                    degree,
                    with_exact_weights.then_some(exact_degree),
                )
            }
        };
        Ok(Self {
            n_nodes: n,
            bandwidth,
            storage,
            adjacency,
            degree,
            exact_degree,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn storage(&self) -> GraphStorage {
        self.storage
    }

    pub fn has_exact_weights(&self) -> bool {
        self.exact_degree.is_some()
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// `W_ij` (zero for `i == j` and for pairs outside the window).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.lookup(i, j, false).unwrap_or(0.0)
    }

    /// `W~_ij`, if exact weights were built.
    pub fn exact_weight(&self, i: usize, j: usize) -> Option<f64> {
        self.exact_degree.as_ref()?;
        Some(self.lookup(i, j, true).unwrap_or(0.0))
    }

    fn lookup(&self, i: usize, j: usize, exact: bool) -> Option<f64> {
        if i == j {
            return None;
        }
        match &self.adjacency {
            Adjacency::Dense { w, wt } => {
                let m = if exact { wt.as_ref()? } else { w };
                Some(m[i * self.n_nodes + j])
            }
            Adjacency::Sparse { offsets, cols, w, wt } => {
                let m = if exact { wt.as_ref()? } else { w };
                let range = offsets[i]..offsets[i + 1];
                let k = cols[range.clone()].iter().position(|&c| c as usize == j)?;
                Some(m[range.start + k])
            }
        }
    }

    /// Calls `visit(j, W_ij)` (or `W~_ij`) for every stored neighbor of `i`.
    fn for_neighbors(&self, i: usize, exact: bool, mut visit: impl FnMut(usize, f64)) {
        match &self.adjacency {
            Adjacency::Dense { w, wt } => {
                let m = if exact { wt.as_ref().expect("checked") } else { w };
                let row = &m[i * self.n_nodes..(i + 1) * self.n_nodes];
                for (j, v) in row.iter().enumerate() {
                    if j != i {
                        visit(j, *v);
                    }
                }
            }
            Adjacency::Sparse { offsets, cols, w, wt } => {
                let m = if exact { wt.as_ref().expect("checked") } else { w };
                for k in offsets[i]..offsets[i + 1] {
                    visit(cols[k] as usize, m[k]);
                }
            }
        }
    }

    fn check_nodes(&self, nodes: &[f64], dim: usize) -> Result<()> {
        if dim == 0 || nodes.len() != self.n_nodes * dim {
            return Err(Error::Shape(format!(
                "{} values do not form {} nodes of dimension {dim}",
                nodes.len(),
                self.n_nodes
            )));
        }
        Ok(())
    }

    /// `L X` (or `L~ X`) for node-major `X`: row `i` is
    /// `sum_j W_ij (x_i - x_j)`.
    pub fn laplacian_apply(&self, nodes: &[f64], dim: usize, exact: bool) -> Result<Vec<f64>> {
        self.check_nodes(nodes, dim)?;
        if exact && !self.has_exact_weights() {
            return Err(Error::MissingExactWeights);
        }
        let mut out = vec![0.0; nodes.len()];
        out.par_chunks_mut(dim).enumerate().for_each(|(i, dst)| {
            let xi = &nodes[i * dim..(i + 1) * dim];
            self.for_neighbors(i, exact, |j, w| {
                if w != 0.0 {
                    let xj = &nodes[j * dim..(j + 1) * dim];
                    for ((d, a), b) in dst.iter_mut().zip(xi).zip(xj) {
                        *d += w * (a - b);
                    }
                }
            });
        });
        Ok(out)
    }

    /// `sum_{i<j} W_ij ||x_i - x_j||^2`.
    pub fn pair_sum(&self, nodes: &[f64], dim: usize) -> Result<f64> {
        self.check_nodes(nodes, dim)?;
        let partial: Vec<f64> = (0..self.n_nodes)
            .into_par_iter()
            .map(|i| {
                let xi = &nodes[i * dim..(i + 1) * dim];
                let mut acc = 0.0;
                self.for_neighbors(i, false, |j, w| {
                    if j > i {
                        acc += w * sq_dist(xi, &nodes[j * dim..(j + 1) * dim]);
                    }
                });
                acc
            })
            .collect();
        Ok(partial.iter().sum())
    }

    /// `tr(X^T L X)` summed over the node dimensions.
    pub fn quadratic_form(&self, nodes: &[f64], dim: usize) -> Result<f64> {
        let lx = self.laplacian_apply(nodes, dim, false)?;
        Ok(nodes.iter().zip(&lx).map(|(a, b)| a * b).sum())
    }

    /// Dense `L = D - W` (or `L~`), for inspection on small graphs.
    pub fn laplacian_dense(&self, exact: bool) -> Result<Vec<f64>> {
        let n = self.n_nodes;
        let degree = if exact {
            self.exact_degree.as_ref().ok_or(Error::MissingExactWeights)?
        } else {
            &self.degree
        };
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            l[i * n + i] = degree[i];
            self.for_neighbors(i, exact, |j, w| l[i * n + j] -= w);
        }
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{fold, FeatureMap};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn folded_1d(values: &[f64]) -> FoldedFeatureMap {
        fold(&FeatureMap::new(1, values.len(), values.to_vec()).unwrap(), 1).unwrap()
    }

    fn random_nodes(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn line(n: usize) -> NodeGrid {
        NodeGrid { rows: 1, cols: n }
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(median_bandwidth(&folded_1d(&[0.0, 2.0]), 100, 0).unwrap(), 2.0);
        assert_eq!(median_bandwidth(&folded_1d(&[0.0, 1.0, 3.0]), 100, 0).unwrap(), 2.0);
        assert!(matches!(
            median_bandwidth(&folded_1d(&[0.5, 0.5, 0.5]), 100, 0),
            Err(Error::DegenerateBandwidth)
        ));
    }

    #[test]
    fn bandwidth_falls_back_to_positive_distances() {
        // 4 equal nodes and 1 outlier: 6 zero distances out of 10
        let bw = median_bandwidth(&folded_1d(&[0.0, 0.0, 0.0, 0.0, 3.0]), 100, 0).unwrap();
        assert_eq!(bw, 3.0);
    }

    #[test]
    fn sampled_bandwidth_is_seeded_and_close() {
        let vals = random_nodes(400, 1, 3);
        let f = folded_1d(&vals);
        let exact = median_bandwidth(&f, usize::MAX, 0).unwrap();
        let a = median_bandwidth(&f, 20_000, 7).unwrap();
        assert_eq!(a, median_bandwidth(&f, 20_000, 7).unwrap());
        assert!((a - exact).abs() < 0.03 * exact, "{a} vs {exact}");
    }

    #[test]
    fn weight_examples() {
        let f = folded_1d(&[1.0, 1.0, 3.0]);
        let g = SimilarityGraph::build(&f, 2.0, GraphStorage::Dense, line(3), true).unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
        assert!((g.weight(0, 2) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g.weight(0, 2) - 0.367879).abs() < 1e-6);
        assert_eq!(g.exact_weight(0, 2).unwrap(), 0.0);
        assert_eq!(g.weight(1, 1), 0.0);
        assert!(SimilarityGraph::build(&f, 0.0, GraphStorage::Dense, line(3), false).is_err());
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_symmetric() {
        let nodes = random_nodes(12, 3, 1);
        for storage in [GraphStorage::Dense, GraphStorage::Windowed { radius: 1 }] {
            let g = SimilarityGraph::build_from_nodes(&nodes, 3, 0.8, storage, NodeGrid { rows: 3, cols: 4 }, true)
                .unwrap();
            for exact in [false, true] {
                let l = g.laplacian_dense(exact).unwrap();
                for i in 0..12 {
                    let s: f64 = l[i * 12..(i + 1) * 12].iter().sum();
                    assert!(s.abs() < 1e-14);
                    for j in 0..12 {
                        assert_eq!(l[i * 12 + j], l[j * 12 + i]);
                    }
                }
            }
        }
    }

    #[test]
    fn window_excludes_distant_nodes() {
        let nodes = random_nodes(25, 2, 2);
        let g = SimilarityGraph::build_from_nodes(
            &nodes,
            2,
            1.0,
            GraphStorage::Windowed { radius: 1 },
            NodeGrid { rows: 5, cols: 5 },
            false,
        )
        .unwrap();
        assert!(g.weight(0, 6) > 0.0);
        assert_eq!(g.weight(0, 2), 0.0);
        assert_eq!(g.weight(0, 10), 0.0);
        assert!(g.exact_weight(0, 6).is_none());
    }

    #[test]
    fn two_node_hand_computation() {
        let t = 0.7;
        let g = SimilarityGraph::build(&folded_1d(&[0.0, t]), 1.3, GraphStorage::Dense, line(2), false).unwrap();
        let w = g.weight(0, 1);
        let nodes = [0.0, t];
        assert!((g.pair_sum(&nodes, 1).unwrap() - w * t * t).abs() < 1e-15);
        assert!((g.quadratic_form(&nodes, 1).unwrap() - w * t * t).abs() < 1e-15);
    }

    #[test]
    fn pair_sum_equals_trace_form() {
        for seed in 0..10 {
            let nodes = random_nodes(10, 4, seed);
            let g = SimilarityGraph::build_from_nodes(&nodes, 4, 1.5, GraphStorage::Dense, line(10), false).unwrap();
            let a = g.pair_sum(&nodes, 4).unwrap();
            let b = g.quadratic_form(&nodes, 4).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs());
        }
    }

    #[test]
    fn exact_weights_require_flag() {
        let nodes = random_nodes(4, 1, 0);
        let g = SimilarityGraph::build_from_nodes(&nodes, 1, 1.0, GraphStorage::Dense, line(4), false).unwrap();
        assert!(matches!(g.laplacian_apply(&nodes, 1, true), Err(Error::MissingExactWeights)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn laplacian_is_psd(seed in 0u64..1000, n in 2usize..30, dim in 1usize..5, bw in 0.1f64..3.0) {
            let nodes = random_nodes(n, dim, seed);
            let g = SimilarityGraph::build_from_nodes(&nodes, dim, bw, GraphStorage::Dense, line(n), false).unwrap();
            let v = random_nodes(n, 1, seed + 1);
            let q = g.quadratic_form(&v, 1).unwrap();
            let vv: f64 = v.iter().map(|a| a * a).sum();
            prop_assert!(q >= -1e-10 * vv);
        }
    }
}
