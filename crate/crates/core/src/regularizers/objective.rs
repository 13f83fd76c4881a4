//! The combined regularizer `r_eps = r^_eps + lambda r-` and the smoothing state.

use serde::{Deserialize, Serialize};

use super::graph::{
    median_bandwidth, GraphMode, GraphStorage, NodeGrid, SimilarityGraph, DEFAULT_SAMPLE_BUDGET,
    DEFAULT_WINDOW_RADIUS,
};
use super::sparsity::{shifted_smoothed_norm, smoothed_norm, sparsity_change};
use crate::error::{Error, Result};
use crate::features::{apply_g_raw, FilterBank, GradientMode};
use crate::tensor::{fold, unfold_adjoint, FeatureMap, FoldedFeatureMap, Image};

/// Requested graph storage; `Auto` picks dense up to the node limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageChoice {
    #[default]
    Auto,
    Dense,
    Windowed,
}

impl std::str::FromStr for StorageChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "dense" => Ok(Self::Dense),
            "windowed" => Ok(Self::Windowed),
            other => Err(Error::InvalidParameter(format!("unknown graph storage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerConfig {
    pub lambda: f64,
    pub kappa: usize,
    pub graph_mode: GraphMode,
    pub storage: StorageChoice,
    pub window_radius: usize,
    /// Pair budget of the median-distance bandwidth estimate.
    pub sample_budget: usize,
    pub bandwidth_seed: u64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            kappa: 4,
            graph_mode: GraphMode::Frozen,
            storage: StorageChoice::Auto,
            window_radius: DEFAULT_WINDOW_RADIUS,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
            bandwidth_seed: 0,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.kappa == 0 {
            return Err(Error::InvalidParameter("kappa must be >= 1".into()));
        }
        Ok(())
    }

    pub fn resolve_storage(&self, n_nodes: usize) -> GraphStorage {
        match self.storage {
            StorageChoice::Auto => GraphStorage::auto(n_nodes, self.window_radius),
            StorageChoice::Dense => GraphStorage::Dense,
            StorageChoice::Windowed => GraphStorage::Windowed {
                radius: self.window_radius,
            },
        }
    }
}

/// Current smoothing level and the reduction rule `eps <- gamma eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingState {
    pub eps: f64,
    pub eps0: f64,
    pub gamma: f64,
    pub sigma_red: f64,
    /// Pixel locations `m`.
    pub locations: usize,
    pub reductions: u32,
}

impl SmoothingState {
    pub fn new(eps0: f64, gamma: f64, sigma_red: f64, locations: usize) -> Result<Self> {
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps0 must be positive, got {eps0}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !(sigma_red > 0.0 && sigma_red.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma_red}")));
        }
        Ok(Self {
            eps: eps0,
            eps0,
            gamma,
            sigma_red,
            locations,
            reductions: 0,
        })
    }

    /// `m eps / 2`, the gap between the smoothed and unsmoothed sparsity terms.
    pub fn offset(&self) -> f64 {
        self.locations as f64 * self.eps / 2.0
    }
}

enum Nonlocal {
    Off,
    Frozen(SimilarityGraph),
    Exact { bandwidth: f64, storage: GraphStorage },
}

/// Values of the regularizer parts at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerEval {
    /// `r^_eps(x)`.
    pub sparsity: f64,
    /// `r^_eps(x) + m eps / 2`, accumulated per location.
    pub sparsity_shifted: f64,
    /// `r-(x)`, without the factor `lambda`.
    pub nonlocal: f64,
    /// `r^_eps(x) + lambda r-(x)`.
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

/// `r_eps = r^_eps + lambda r-` on a fixed image grid.
pub struct Regularizer {
    bank: FilterBank,
    config: RegularizerConfig,
    height: usize,
    width: usize,
    grid: NodeGrid,
    nonlocal: Nonlocal,
}

impl std::fmt::Debug for Regularizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Regularizer")
            .field("config", &self.config)
            .field("height", &self.height)
            .field("width", &self.width)
            .field("bandwidth", &self.bandwidth())
            .finish()
    }
}

impl Regularizer {
    /// Sets up the regularizer on the grid of `x0`. With `lambda > 0` the
    /// bandwidth is estimated at `x0`, and in frozen mode the graph is built
    /// there as well.
    pub fn new(bank: FilterBank, config: RegularizerConfig, x0: &Image) -> Result<Self> {
        config.validate()?;
        let (h, w) = (x0.height(), x0.width());
        if (h * w) % config.kappa != 0 {
            return Err(Error::FoldRate {
                kappa: config.kappa,
                locations: h * w,
            });
        }
        let grid = NodeGrid::for_image(h, w, config.kappa);
        let mut reg = Self {
            bank,
            config,
            height: h,
            width: w,
            grid,
            nonlocal: Nonlocal::Off,
        };
        if reg.config.lambda > 0.0 {
            let folded = reg.folded(x0.values())?.0;
            let bandwidth = median_bandwidth(&folded, reg.config.sample_budget, reg.config.bandwidth_seed)?;
            let storage = reg.config.resolve_storage(folded.nodes());
            reg.nonlocal = match reg.config.graph_mode {
                GraphMode::Frozen => Nonlocal::Frozen(SimilarityGraph::build(&folded, bandwidth, storage, grid, false)?),
                GraphMode::Exact => Nonlocal::Exact { bandwidth, storage },
            };
        }
        Ok(reg)
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn config(&self) -> &RegularizerConfig {
        &self.config
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match &self.nonlocal {
            Nonlocal::Off => None,
            Nonlocal::Frozen(g) => Some(g.bandwidth()),
            Nonlocal::Exact { bandwidth, .. } => Some(*bandwidth),
        }
    }

    /// The fixed graph in frozen mode.
    pub fn frozen_graph(&self) -> Option<&SimilarityGraph> {
        match &self.nonlocal {
            Nonlocal::Frozen(g) => Some(g),
            _ => None,
        }
    }

    /// Graph at `x`: the frozen one, or one rebuilt at `x` in exact mode.
    pub fn graph_at(&self, x: &[f64], with_exact_weights: bool) -> Result<Option<SimilarityGraph>> {
        match &self.nonlocal {
            Nonlocal::Off => Ok(None),
            Nonlocal::Frozen(g) => Ok(Some(g.clone())),
            Nonlocal::Exact { bandwidth, storage } => {
                let folded = self.folded(x)?.0;
                Ok(Some(SimilarityGraph::build(&folded, *bandwidth, *storage, self.grid, with_exact_weights)?))
            }
        }
    }

    fn folded(&self, x: &[f64]) -> Result<(FoldedFeatureMap, FeatureMap)> {
        let (f, _) = apply_g_raw(x, self.height, self.width, &self.bank)?;
        Ok((fold(&f, self.config.kappa)?, f))
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.locations() {
            return Err(Error::Shape(format!(
                "image has {} pixels, regularizer expects {}x{}",
                x.len(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// `r-` at features `f` and, if requested, `scale * d r- / d g` in feature
    /// layout, routed back through the fold adjoint.
    fn nonlocal_part(&self, f: &FeatureMap, with_grad: bool, scale: f64) -> Result<(f64, Option<FeatureMap>)> {
        if matches!(self.nonlocal, Nonlocal::Off) {
            return Ok((0.0, None));
        }
        let folded = fold(f, self.config.kappa)?;
        let dim = folded.folded_channels();
        let nodes = folded.node_vectors();
        let rebuilt;
        let (graph, exact) = match &self.nonlocal {
            Nonlocal::Frozen(g) => (g, false),
            Nonlocal::Exact { bandwidth, storage } => {
                rebuilt = SimilarityGraph::build_from_nodes(&nodes, dim, *bandwidth, *storage, self.grid, with_grad)?;
                (&rebuilt, true)
            }
            Nonlocal::Off => unreachable!(),
        };
        let value = graph.pair_sum(&nodes, dim)?;
        if !with_grad {
            return Ok((value, None));
        }
        let mut lx = graph.laplacian_apply(&nodes, dim, exact)?;
        lx.iter_mut().for_each(|v| *v *= scale);
        let g = FoldedFeatureMap::from_node_vectors(f.channels(), self.config.kappa, folded.nodes(), &lx)?;
        Ok((value, Some(unfold_adjoint(&g, f.channels(), f.locations())?)))
    }

    /// `grad r-(x)` without the weight `lambda`; zero when `lambda = 0`.
    pub fn nonlocal_gradient(&self, x: &[f64], mode: GradientMode) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let (f, state) = apply_g_raw(x, self.height, self.width, &self.bank)?;
        match self.nonlocal_part(&f, true, 2.0)?.1 {
            None => Ok(vec![0.0; x.len()]),
            Some(cot) => state.transpose_apply_raw(&self.bank, cot.values(), mode),
        }
    }

    /// Evaluates `r_eps` at `x` and, if `gradient` is set, its gradient with
    /// the requested transposes. Both terms share one pass through `g`.
    pub fn evaluate(&self, x: &[f64], eps: f64, gradient: Option<GradientMode>) -> Result<RegularizerEval> {
        self.check_len(x)?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoothing parameter must be positive, got {eps}")));
        }
        let (f, state) = apply_g_raw(x, self.height, self.width, &self.bank)?;
        let norms = f.column_norms();
        let mut sparsity = 0.0;
        let mut sparsity_shifted = 0.0;
        for n in &norms {
            sparsity += smoothed_norm(*n, eps);
            sparsity_shifted += shifted_smoothed_norm(*n, eps);
        }

        let (nonlocal, nonlocal_cot) = self.nonlocal_part(&f, gradient.is_some(), 2.0 * self.config.lambda)?;

        let grad = match gradient {
            None => None,
            Some(mode) => {
                let scale: Vec<f64> = norms.iter().map(|n| 1.0 / n.max(eps)).collect();
                let mut cot = f.scale_columns(&scale);
                if let Some(nl) = nonlocal_cot {
                    for (c, v) in cot.values_mut().iter_mut().zip(nl.values()) {
                        *c += v;
                    }
                }
                Some(state.transpose_apply_raw(&self.bank, cot.values(), mode)?)
            }
        };
        Ok(RegularizerEval {
            sparsity,
            sparsity_shifted,
            nonlocal,
            value: sparsity + self.config.lambda * nonlocal,
            gradient: grad,
        })
    }

    /// `r_eps(y) - r_eps(x)`, evaluated per location (and, with a frozen
    /// graph, as `2 <L g(x), dg> + dg^T L dg`) so that it keeps its relative
    /// accuracy when the change is far below the rounding level of `r_eps`.
    /// Linear banks map `y - x` directly; deeper banks difference `g(y) - g(x)`.
    pub fn value_change(&self, x: &[f64], y: &[f64], eps: f64) -> Result<f64> {
        self.check_len(x)?;
        self.check_len(y)?;
        let (h, w) = (self.height, self.width);
        let (fx, _) = apply_g_raw(x, h, w, &self.bank)?;
        let (fy, fd) = if self.bank.is_linear() {
            let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            let (fd, _) = apply_g_raw(&d, h, w, &self.bank)?;
            let sum = fx.values().iter().zip(fd.values()).map(|(a, b)| a + b).collect();
            (FeatureMap::new(fx.channels(), fx.locations(), sum)?, fd)
        } else {
            let (fy, _) = apply_g_raw(y, h, w, &self.bank)?;
            let diff = fy.values().iter().zip(fx.values()).map(|(a, b)| a - b).collect();
            let fd = FeatureMap::new(fx.channels(), fx.locations(), diff)?;
            (fy, fd)
        };
        let sparsity = sparsity_change(&fx, &fy, &fd, eps)?;
        let nonlocal = match &self.nonlocal {
            Nonlocal::Off => 0.0,
            Nonlocal::Frozen(g) => {
                let nx = fold(&fx, self.config.kappa)?;
                let nd = fold(&fd, self.config.kappa)?;
                let dim = nx.folded_channels();
                let (vx, vd) = (nx.node_vectors(), nd.node_vectors());
                let lx = g.laplacian_apply(&vx, dim, false)?;
                2.0 * vd.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>() + g.pair_sum(&vd, dim)?
            }
            Nonlocal::Exact { .. } => self.nonlocal_part(&fy, false, 0.0)?.0 - self.nonlocal_part(&fx, false, 0.0)?.0,
        };
        Ok(sparsity + self.config.lambda * nonlocal)
    }

    /// `r_{eps_new}(x) - r_{eps_old}(x)`; only the sparsity term depends on
    /// the smoothing.
    pub fn smoothing_change(&self, x: &[f64], eps_old: f64, eps_new: f64) -> Result<f64> {
        self.check_len(x)?;
        for e in [eps_old, eps_new] {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidParameter(format!("smoothing parameter must be positive, got {e}")));
            }
        }
        let (f, _) = apply_g_raw(x, self.height, self.width, &self.bank)?;
        Ok(f.column_norms()
            .iter()
            .map(|&n| {
                if n > eps_old && n > eps_new {
                    0.5 * (eps_old - eps_new)
                } else {
                    smoothed_norm(n, eps_new) - smoothed_norm(n, eps_old)
                }
            })
            .sum())
    }

    pub fn value(&self, x: &[f64], eps: f64) -> Result<f64> {
        Ok(self.evaluate(x, eps, None)?.value)
    }

    pub fn gradient(&self, x: &[f64], eps: f64, mode: GradientMode) -> Result<Vec<f64>> {
        Ok(self.evaluate(x, eps, Some(mode))?.gradient.expect("requested"))
    }

    /// Per-location `r_{eps,i}(x) + eps/2`.
    pub fn shifted_location_terms(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let (f, _) = apply_g_raw(x, self.height, self.width, &self.bank)?;
        super::sparsity::shifted_location_terms(&f, eps)
    }
}
