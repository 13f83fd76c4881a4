//! Property checks behind the `verify` command and the acceptance suite.
//!
//! Every check reports the measured value next to its limit so a report can
//! be read without rerunning anything.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ct::{fbp, FanBeamGeometry, FbpFilter, LinearFidelity, Projector};
use crate::error::{Error, Result};
use crate::features::{apply_g_raw, FilterBank, GradientMode};
use crate::regularizers::{
    l21_norm, sparsity_value, GraphMode, GraphStorage, NodeGrid, Regularizer, RegularizerConfig, SimilarityGraph,
};
use crate::sim::{scaled_phantom, simulate_noisy_sinogram, DoseModel};
use crate::solver::{run, Method, SolverConfig, SolverOutput, SolverTrace, StepRule};
use crate::tensor::{dot, Image};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: "<=",
            limit,
            passed: measured <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: ">=",
            limit,
            passed: measured >= limit,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {:e} {} {:e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.relation,
            self.limit
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Adjoint,
    Gradients,
    Descent,
    Smoothing,
    Noise,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Adjoint, Suite::Gradients, Suite::Descent, Suite::Smoothing, Suite::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Adjoint => "adjoint",
            Suite::Gradients => "gradients",
            Suite::Descent => "descent",
            Suite::Smoothing => "smoothing",
            Suite::Noise => "noise",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn new(suite: Suite, checks: Vec<Check>) -> Self {
        Self {
            suite,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Adjoint => adjoint_checks(32, 100, seed)?,
        Suite::Gradients => gradient_checks(20, seed)?,
        Suite::Descent => {
            let mut out = Vec::new();
            for (label, run) in descent_runs(seed)? {
                out.extend(trace_checks(&label, &run.trace));
                match label.as_str() {
                    "fixed-eps" => out.push(Check::at_most(
                        "fixed-eps min gradient norm",
                        run.trace.min_grad_norm(),
                        1e-6,
                    )),
                    "schedule" => out.push(Check::at_least(
                        "schedule eps reductions",
                        eps_reductions(&run.trace) as f64,
                        1.0,
                    )),
                    "safeguard" => out.push(Check::at_least(
                        "safeguard v-branch count",
                        run.trace.v_count() as f64,
                        1.0,
                    )),
                    _ => {}
                }
            }
            out
        }
        Suite::Smoothing => {
            let mut out = vec![sandwich_check(50, seed)?];
            out.push(quadratic_form_check(30, seed)?);
            out.push(laplacian_psd_check(1000, seed)?);
            out
        }
        Suite::Noise => noise_checks(1_000_000, seed)?,
    };
    Ok(SuiteReport::new(suite, checks))
}

fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

// ---- adjoint ------------------------------------------------------------

/// `max |<Ax, y> - <x, A^T y>| / (||Ax|| ||y||)` over random pairs on the
/// desk geometry at `n x n`.
pub fn adjoint_gap(n: usize, pairs: usize, seed: u64) -> Result<f64> {
    let geo = FanBeamGeometry::desk().with_image_size(n);
    let p = Projector::new(geo.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = Image::new(n, n, geo.pixel_size(), random_vec(&mut rng, n * n, -1.0, 1.0))?;
        let y = crate::Sinogram::new(
            geo.n_views,
            geo.n_detectors,
            random_vec(&mut rng, geo.n_views * geo.n_detectors, -1.0, 1.0),
        )?;
        let ax = p.forward(&x)?;
        let aty = p.back(&y)?;
        let gap = (dot(ax.values(), y.values()) - dot(x.values(), aty.values())).abs();
        worst = worst.max(gap / (norm(ax.values()) * norm(y.values())));
    }
    Ok(worst)
}

pub fn adjoint_checks(n: usize, pairs: usize, seed: u64) -> Result<Vec<Check>> {
    Ok(vec![Check::at_most(
        format!("adjoint relative gap over {pairs} pairs at {n}x{n}"),
        adjoint_gap(n, pairs, seed)?,
        1e-10,
    )])
}

// ---- gradients ----------------------------------------------------------

/// Coarse scanner for coordinate-wise differences on a 16x16 grid: the
/// desk field with 60 views and 32 cells of 4x the desk width.
fn small_geometry(n: usize) -> FanBeamGeometry {
    let desk = FanBeamGeometry::desk();
    FanBeamGeometry {
        n_detectors: 32,
        detector_width: desk.detector_width * 4.0,
        ..desk.with_image_size(n).with_views(60)
    }
}

/// `||grad phi - fd||_2 / ||fd||_2` with `fd` the central differences of
/// `phi_eps = f + r_eps` along every coordinate.
pub fn gradient_relative_error(fid: &LinearFidelity, reg: &Regularizer, x: &[f64], eps: f64, h: f64) -> Result<f64> {
    let phi = |p: &[f64]| -> Result<f64> { Ok(fid.value_raw(p)? + reg.value(p, eps)?) };
    let mut g = fid.gradient_raw(x)?;
    for (a, b) in g.iter_mut().zip(reg.gradient(x, eps, GradientMode::Exact)?) {
        *a += b;
    }
    let fd = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut p = x.to_vec();
            p[i] = x[i] + h;
            let up = phi(&p)?;
            p[i] = x[i] - h;
            let down = phi(&p)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&fd))
}

/// Worst relative error at `points` random images for the tv and a
/// seeded-random bank, in frozen and exact graph mode.
pub fn gradient_checks(points: usize, seed: u64) -> Result<Vec<Check>> {
    let n = 16;
    let geo = small_geometry(n);
    let proj = Projector::new(geo.clone())?;
    let truth = scaled_phantom(n, geo.pixel_size(), 0.02)?;
    let noisy = simulate_noisy_sinogram(&proj.forward(&truth)?, &DoseModel::new(2.5e4, 10.0, seed)?)?;
    let x0 = fbp(&noisy, &geo, FbpFilter::RamLak)?;
    let fid = LinearFidelity::new(proj, noisy)?;
    let eps = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..points).map(|_| random_vec(&mut rng, n * n, 0.0, 0.04)).collect();

    let cases = [
        ("tv", FilterBank::tv(1.0), GraphMode::Frozen, 1e-5),
        ("seeded-random", FilterBank::seeded_random(seed, 2, 4), GraphMode::Frozen, 1e-5),
        ("tv", FilterBank::tv(1.0), GraphMode::Exact, 1e-4),
        ("seeded-random", FilterBank::seeded_random(seed, 2, 4), GraphMode::Exact, 1e-4),
    ];
    let mut out = Vec::new();
    for (label, bank, mode, tol) in cases {
        let cfg = RegularizerConfig {
            lambda: 0.5,
            graph_mode: mode,
            ..Default::default()
        };
        let reg = Regularizer::new(bank, cfg, &x0)?;
        let mut worst = 0.0f64;
        for x in &xs {
            worst = worst.max(gradient_relative_error(&fid, &reg, x, eps, 1e-6)?);
        }
        let mode = match mode {
            GraphMode::Frozen => "frozen",
            GraphMode::Exact => "exact",
        };
        out.push(Check::at_most(
            format!("gradient relative error, {label} bank, {mode} graph, {points} points"),
            worst,
            tol,
        ));
    }
    Ok(out)
}

// ---- descent ------------------------------------------------------------

/// A noisy desk reconstruction problem started from FBP.
pub struct DeskProblem {
    pub geometry: FanBeamGeometry,
    pub truth: Image,
    pub x0: Image,
    pub fidelity: LinearFidelity,
    pub regularizer: Regularizer,
}

#[derive(Debug, Clone)]
pub struct DeskProblemSpec {
    pub image_size: usize,
    pub mu_scale: f64,
    pub dose: DoseModel,
    pub bank: FilterBank,
    pub regularizer: RegularizerConfig,
}

impl DeskProblemSpec {
    pub fn build(&self) -> Result<DeskProblem> {
        let geometry = FanBeamGeometry::desk().with_image_size(self.image_size);
        let proj = Projector::new(geometry.clone())?;
        let truth = scaled_phantom(self.image_size, geometry.pixel_size(), self.mu_scale)?;
        let noisy = simulate_noisy_sinogram(&proj.forward(&truth)?, &self.dose)?;
        let x0 = fbp(&noisy, &geometry, FbpFilter::RamLak)?;
        let fidelity = LinearFidelity::new(proj, noisy)?;
        let regularizer = Regularizer::new(self.bank.clone(), self.regularizer.clone(), &x0)?;
        Ok(DeskProblem {
            geometry,
            truth,
            x0,
            fidelity,
            regularizer,
        })
    }
}

/// Largest curvature of `phi_eps` near `x`, by power iteration on central
/// differences of its gradient.
pub fn phi_curvature(fid: &LinearFidelity, reg: &Regularizer, x: &[f64], eps: f64, iterations: usize) -> Result<f64> {
    let grad = |p: &[f64]| -> Result<Vec<f64>> {
        let mut g = fid.gradient_raw(p)?;
        for (a, b) in g.iter_mut().zip(reg.gradient(p, eps, GradientMode::Exact)?) {
            *a += b;
        }
        Ok(g)
    };
    let h = 1e-7;
    let mut v = vec![1.0 / (x.len() as f64).sqrt(); x.len()];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let hv: Vec<f64> = grad(&plus)?
            .iter()
            .zip(grad(&minus)?)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        lambda = norm(&hv);
        if lambda == 0.0 {
            break;
        }
        v = hv.iter().map(|a| a / lambda).collect();
    }
    Ok(lambda)
}

/// Low-contrast, high-count 32x32 instance on which gradient steps at fixed
/// `eps` converge fast: every smoothed location stays on the quadratic
/// branch, which conditions the tv term.
pub fn fixed_eps_spec(seed: u64) -> DeskProblemSpec {
    DeskProblemSpec {
        image_size: 32,
        mu_scale: 3e-4,
        dose: DoseModel {
            i0: 1e9,
            sigma_e2: 10.0,
            seed,
        },
        bank: FilterBank::tv(5.48),
        regularizer: RegularizerConfig {
            lambda: 0.0,
            ..Default::default()
        },
    }
}

pub const FIXED_EPS: f64 = 1e-3;

/// Solver settings for the fixed-`eps` run: `alpha = 1 / L` with `L` the
/// curvature of `phi_eps` at the start.
pub fn fixed_eps_config(problem: &DeskProblem, max_iters: usize) -> Result<SolverConfig> {
    let l = phi_curvature(&problem.fidelity, &problem.regularizer, problem.x0.values(), FIXED_EPS, 40)?;
    Ok(SolverConfig {
        freeze_eps: true,
        eps0: FIXED_EPS,
        max_iters,
        alpha: StepRule::Constant(1.0 / l),
        ..Default::default()
    })
}

/// 32x32 instance with perturbed transposes `w^T + E`, `||E|| = 10 ||w^T||`,
/// used by the u-candidate.
pub fn safeguard_spec(seed: u64) -> Result<DeskProblemSpec> {
    let bank = FilterBank::tv(1.0);
    let perturbed = bank.perturbed_transposes(10.0, seed);
    Ok(DeskProblemSpec {
        image_size: 32,
        mu_scale: 0.02,
        dose: DoseModel {
            i0: 2.5e4,
            sigma_e2: 10.0,
            seed,
        },
        bank: bank.with_inexact(perturbed)?,
        regularizer: RegularizerConfig::default(),
    })
}

/// The fixed-`eps` run, the same instance with the smoothing schedule, and
/// the perturbed-transpose run, labelled `fixed-eps`, `schedule` and
/// `safeguard`.
pub fn descent_runs(seed: u64) -> Result<Vec<(String, SolverOutput)>> {
    let fixed = fixed_eps_spec(seed).build()?;
    let cfg = fixed_eps_config(&fixed, 500)?;
    let frozen = run(fixed.x0.values(), &fixed.fidelity, &fixed.regularizer, &cfg, Method::Elda)?;
    let scheduled_cfg = SolverConfig {
        freeze_eps: false,
        ..cfg
    };
    let scheduled = run(
        fixed.x0.values(),
        &fixed.fidelity,
        &fixed.regularizer,
        &scheduled_cfg,
        Method::Elda,
    )?;

    let guard = safeguard_spec(seed)?.build()?;
    let guard_cfg = SolverConfig {
        max_iters: 100,
        gradient_mode: GradientMode::Inexact,
        ..Default::default()
    };
    let guarded = run(guard.x0.values(), &guard.fidelity, &guard.regularizer, &guard_cfg, Method::Elda)?;
    Ok(vec![
        ("fixed-eps".into(), frozen),
        ("schedule".into(), scheduled),
        ("safeguard".into(), guarded),
    ])
}

pub fn eps_reductions(trace: &SolverTrace) -> usize {
    trace.records.iter().filter(|r| r.eps_next < r.eps).count()
}

/// Replays the trace invariants: monotone descent at fixed `eps`, the
/// Lyapunov decrease, each step's own decrease clause, the `eps` schedule
/// and the backtrack bound.
pub fn trace_checks(label: &str, trace: &SolverTrace) -> Vec<Check> {
    let count = |v: Vec<crate::solver::Violation>| v.len() as f64;
    vec![
        Check::at_most(format!("{label} monotone violations"), count(trace.check_monotone()), 0.0),
        Check::at_most(format!("{label} Lyapunov violations"), count(trace.check_lyapunov()), 0.0),
        Check::at_most(
            format!("{label} sufficient-decrease violations"),
            count(trace.check_sufficient_decrease()),
            0.0,
        ),
        Check::at_most(format!("{label} eps schedule violations"), count(trace.check_eps_trajectory()), 0.0),
        Check::at_most(format!("{label} max backtracks"), trace.max_backtracks() as f64, 60.0),
    ]
}

// ---- smoothing and graph identities -------------------------------------

/// Largest violation of `r^_eps <= r^ <= r^_eps + m eps / 2` over random
/// images, three `eps` values and two banks.
pub fn sandwich_violation(samples: usize, seed: u64) -> Result<f64> {
    let n = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let banks = [FilterBank::tv(1.0), FilterBank::seeded_random(seed, 2, 4)];
    let mut worst = f64::NEG_INFINITY;
    for s in 0..samples {
        // Scales spread over decades so both branches are exercised.
        let scale = 10f64.powf(rng.random_range(-4.0..0.0));
        let x = random_vec(&mut rng, n * n, 0.0, scale);
        let (f, _) = apply_g_raw(&x, n, n, &banks[s % banks.len()])?;
        let exact = l21_norm(&f);
        for eps in [1e-1, 1e-2, 1e-3] {
            let smooth = sparsity_value(&f, eps)?;
            let offset = f.locations() as f64 * eps / 2.0;
            worst = worst.max(smooth - exact).max(exact - (smooth + offset));
        }
    }
    Ok(worst)
}

pub fn sandwich_check(samples: usize, seed: u64) -> Result<Check> {
    Ok(Check::at_most(
        format!("smoothing sandwich violation over {samples} images x 3 eps"),
        sandwich_violation(samples, seed)?,
        1e-12,
    ))
}

fn random_graph(rng: &mut impl Rng) -> Result<(SimilarityGraph, Vec<f64>, usize)> {
    let n = rng.random_range(2..=64usize);
    let dim = rng.random_range(1..=8usize);
    let nodes = random_vec(rng, n * dim, -1.0, 1.0);
    let bandwidth = rng.random_range(0.2..3.0);
    let graph = SimilarityGraph::build_from_nodes(
        &nodes,
        dim,
        bandwidth,
        GraphStorage::Dense,
        NodeGrid::for_image(1, n, 1),
        false,
    )?;
    Ok((graph, nodes, dim))
}

/// Largest `|pair sum - tr(X^T L X)| / pair sum` over random dense graphs.
pub fn quadratic_form_gap(graphs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..graphs {
        let (graph, nodes, dim) = random_graph(&mut rng)?;
        let pairs = graph.pair_sum(&nodes, dim)?;
        let trace = graph.quadratic_form(&nodes, dim)?;
        worst = worst.max((pairs - trace).abs() / pairs.abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

pub fn quadratic_form_check(graphs: usize, seed: u64) -> Result<Check> {
    Ok(Check::at_most(
        format!("pair sum vs trace form relative gap over {graphs} graphs"),
        quadratic_form_gap(graphs, seed)?,
        1e-10,
    ))
}

/// Smallest `v^T L v / ||v||^2` with `L` assembled densely, over `vectors`
/// random vectors spread across random graphs.
pub fn laplacian_min_rayleigh(vectors: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let per_graph = 50;
    let mut done = 0;
    while done < vectors {
        let (graph, _, _) = random_graph(&mut rng)?;
        let n = graph.n_nodes();
        let l = graph.laplacian_dense(false)?;
        for _ in 0..per_graph.min(vectors - done) {
            let v = random_vec(&mut rng, n, -1.0, 1.0);
            let lv: Vec<f64> = (0..n).map(|i| dot(&l[i * n..(i + 1) * n], &v)).collect();
            worst = worst.min(dot(&v, &lv) / dot(&v, &v));
            done += 1;
        }
    }
    Ok(worst)
}

pub fn laplacian_psd_check(vectors: usize, seed: u64) -> Result<Check> {
    Ok(Check::at_least(
        format!("min Rayleigh quotient of L over {vectors} vectors"),
        laplacian_min_rayleigh(vectors, seed)?,
        -1e-10,
    ))
}

// ---- noise --------------------------------------------------------------

/// Standardized errors of the sample mean and variance of `draws` noisy
/// intensities at dose `i0`, constant line integral `b`, against
/// `I0 e^{-b}` and `I0 e^{-b} + sigma_e2`.
pub fn noise_moment_scores(i0: f64, sigma_e2: f64, b: f64, draws: u64, seed: u64) -> Result<(f64, f64)> {
    let dose = DoseModel::new(i0, sigma_e2, seed)?;
    let mean_count = i0 * (-b).exp();
    let xs: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| dose.sample_intensity(mean_count, i))
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let se_mean = (var / n).sqrt();
    let se_var = ((m4 - var * var) / n).sqrt();
    Ok((
        (mean - mean_count).abs() / se_mean,
        (var - mean_count - sigma_e2).abs() / se_var,
    ))
}

pub fn noise_checks(draws: u64, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for b in [0.0, 1.0] {
        let (zm, zv) = noise_moment_scores(1e6, 10.0, b, draws, seed)?;
        out.push(Check::at_most(format!("noise mean, b = {b}, standard errors"), zm, 3.0));
        out.push(Check::at_most(format!("noise variance, b = {b}, standard errors"), zv, 3.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Fidelity;

    #[test]
    fn check_relations() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(!Check::at_most("a", 1.0 + 1e-15, 1.0).passed);
        assert!(Check::at_least("b", -1.0, -1.0).passed);
        assert!(!Check::at_least("b", f64::NAN, 0.0).passed);
        assert_eq!(
            Check::at_most("x", 0.5, 1.0).to_string(),
            "PASS x: 5e-1 <= 1e0"
        );
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("descnet".parse::<Suite>().is_err());
    }

    #[test]
    fn graph_identities_hold() {
        assert!(quadratic_form_gap(5, 3).unwrap() <= 1e-10);
        assert!(laplacian_min_rayleigh(100, 3).unwrap() >= -1e-10);
    }

    #[test]
    fn sandwich_holds() {
        assert!(sandwich_violation(6, 4).unwrap() <= 1e-12);
    }

    #[test]
    fn adjoint_gap_small() {
        assert!(adjoint_gap(16, 3, 1).unwrap() <= 1e-10);
    }

    #[test]
    fn gradient_error_small() {
        let checks = gradient_checks(1, 2).unwrap();
        assert_eq!(checks.len(), 4);
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    }

    #[test]
    fn curvature_of_quadratic_matches_fidelity_norm() {
        let spec = DeskProblemSpec {
            image_size: 16,
            mu_scale: 0.02,
            dose: DoseModel::new(1e5, 10.0, 1).unwrap(),
            bank: FilterBank::zeros(2),
            regularizer: RegularizerConfig {
                lambda: 0.0,
                ..Default::default()
            },
        };
        let p = spec.build().unwrap();
        let l = phi_curvature(&p.fidelity, &p.regularizer, p.x0.values(), 1e-3, 60).unwrap();
        let lf = p.fidelity.curvature_estimate(60).unwrap();
        assert!((l - lf).abs() <= 1e-3 * lf, "{l} vs {lf}");
    }
}
