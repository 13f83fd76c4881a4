//! The learned-descent iteration with its safeguard and smoothing schedule.
//!
//! Acceptance tests compare `phi(y) - phi(x)` computed in difference form:
//! near stationarity the per-step decrease falls far below the rounding level
//! of `phi` itself.

use std::time::Instant;

use super::config::{Method, SolverConfig, StepRule};
use super::problem::{Fidelity, SmoothedRegularizer};
use super::trace::{Branch, IterationRecord, SolverTrace, Termination};
use crate::error::{ensure_finite, Error, Result};
use crate::features::GradientMode;
use crate::tensor::norm;

fn diff_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a - alpha * b).collect()
}

/// Gradients of `f` and `phi_eps` at an iterate.
struct Gradients {
    grad_f: Vec<f64>,
    grad_phi: Vec<f64>,
}

fn gradients<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    fid: &F,
    reg: &R,
    x: &[f64],
    eps: f64,
) -> Result<(f64, Gradients)> {
    let (fv, grad_f) = fid.value_and_gradient(x)?;
    let r = reg.evaluate(x, eps, Some(GradientMode::Exact))?;
    let grad_phi = grad_f
        .iter()
        .zip(r.gradient.expect("requested"))
        .map(|(a, b)| a + b)
        .collect();
    Ok((fv + r.value, Gradients { grad_f, grad_phi }))
}

fn phi_change<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    fid: &F,
    reg: &R,
    x: &[f64],
    y: &[f64],
    eps: f64,
) -> Result<f64> {
    Ok(fid.value_change(x, y)? + reg.value_change(x, y, eps)?)
}

/// `z = x - alpha grad f(x)` and `u = z - tau grad r_eps(z)`, the latter with
/// the requested transposes.
pub fn u_candidate<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    x: &[f64],
    fid: &F,
    reg: &R,
    eps: f64,
    alpha: f64,
    tau: f64,
    mode: GradientMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, gf) = fid.value_and_gradient(x)?;
    u_from_gradient(x, &gf, reg, eps, alpha, tau, mode)
}

fn u_from_gradient<R: SmoothedRegularizer + ?Sized>(
    x: &[f64],
    grad_f: &[f64],
    reg: &R,
    eps: f64,
    alpha: f64,
    tau: f64,
    mode: GradientMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let z = axpy(x, alpha, grad_f);
    let gr = reg.evaluate(&z, eps, Some(mode))?.gradient.expect("requested");
    let u = axpy(&z, tau, &gr);
    Ok((z, u))
}

/// The descent condition on the u-candidate, both clauses non-strict:
/// `||grad phi(x)|| <= c ||u - x||` and `phi(u) - phi(x) <= -(iota/2) ||u - x||^2`.
pub fn check_condition_u(grad_norm_x: f64, phi_change: f64, step_sq: f64, c: f64, iota: f64) -> bool {
    grad_norm_x <= c * step_sq.sqrt() && phi_change <= -0.5 * iota * step_sq
}

/// Accepted safeguard step.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub v: Vec<f64>,
    /// `phi(v) - phi(x)`.
    pub phi_change: f64,
    pub alpha: f64,
    pub backtracks: usize,
}

#[allow(clippy::too_many_arguments)]
fn line_search<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    x: &[f64],
    grad_phi: &[f64],
    fid: &F,
    reg: &R,
    eps: f64,
    alpha_init: f64,
    rho: f64,
    tau: f64,
    max_backtracks: usize,
    iteration: usize,
) -> Result<LineSearchResult> {
    let mut alpha = alpha_init;
    for backtracks in 0..=max_backtracks {
        let v = axpy(x, alpha, grad_phi);
        let step_sq = diff_sq(&v, x);
        let change = phi_change(fid, reg, x, &v, eps)?;
        if change <= -tau * step_sq {
            return Ok(LineSearchResult {
                v,
                phi_change: change,
                alpha,
                backtracks,
            });
        }
        alpha *= rho;
    }
    Err(Error::LineSearchFailure {
        iteration,
        backtracks: max_backtracks,
    })
}

/// `v = x - alpha grad phi_eps(x)`, shrinking `alpha <- rho alpha` until
/// `phi_eps(v) - phi_eps(x) <= -tau ||v - x||^2`.
#[allow(clippy::too_many_arguments)]
pub fn v_candidate_with_linesearch<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    x: &[f64],
    fid: &F,
    reg: &R,
    eps: f64,
    alpha_init: f64,
    rho: f64,
    tau: f64,
    max_backtracks: usize,
) -> Result<LineSearchResult> {
    let (_, g) = gradients(fid, reg, x, eps)?;
    line_search(x, &g.grad_phi, fid, reg, eps, alpha_init, rho, tau, max_backtracks, 0)
}

/// `gamma eps` if `grad_norm < sigma gamma eps`, else `eps`.
pub fn epsilon_update(eps: f64, grad_norm: f64, sigma: f64, gamma: f64) -> f64 {
    if grad_norm < sigma * gamma * eps {
        gamma * eps
    } else {
        eps
    }
}

/// Final iterate and trace of a run.
#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub x: Vec<f64>,
    pub trace: SolverTrace,
}

/// A failed run with the iterations completed before the failure.
#[derive(Debug)]
pub struct SolverFailure {
    pub error: Error,
    pub records: Vec<IterationRecord>,
}

/// Runs the solver from `x0` for at most `cfg.max_iters` iterations.
pub fn run<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    x0: &[f64],
    fid: &F,
    reg: &R,
    cfg: &SolverConfig,
    method: Method,
) -> Result<SolverOutput> {
    run_recorded(x0, fid, reg, cfg, method).map_err(|f| f.error)
}

/// As [`run`], keeping the partial trace on failure.
pub fn run_recorded<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    x0: &[f64],
    fid: &F,
    reg: &R,
    cfg: &SolverConfig,
    method: Method,
) -> std::result::Result<SolverOutput, SolverFailure> {
    let mut records = Vec::with_capacity(cfg.max_iters);
    run_into(x0, fid, reg, cfg, method, &mut records).map_err(|error| SolverFailure { error, records })
}

fn run_into<F: Fidelity + ?Sized, R: SmoothedRegularizer + ?Sized>(
    x0: &[f64],
    fid: &F,
    reg: &R,
    cfg: &SolverConfig,
    method: Method,
    records: &mut Vec<IterationRecord>,
) -> Result<SolverOutput> {
    cfg.validate()?;
    if x0.len() != fid.dim() {
        return Err(Error::Shape(format!(
            "initial image has {} entries, expected {}",
            x0.len(),
            fid.dim()
        )));
    }
    ensure_finite(x0, "initial image")?;
    let auto_alpha = if matches!(cfg.alpha, StepRule::Keyword(_)) {
        let l = fid.curvature_estimate(cfg.power_iterations)?;
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cannot derive a step size from curvature {l}"
            )));
        }
        1.0 / l
    } else {
        f64::NAN
    };

    let mut x = x0.to_vec();
    let mut eps = cfg.eps0;
    let (mut phi, mut grads) = gradients(fid, reg, &x, eps)?;
    let mut termination = Termination::MaxIterations;

    for k in 0..cfg.max_iters {
        let started = cfg.record_wall_time.then(Instant::now);
        let alpha = cfg.alpha.at(k, auto_alpha);
        let beta = cfg.beta.at(k, alpha);
        let tau_k = alpha * beta / (alpha + beta);
        let grad_norm = norm(&grads.grad_phi);

        let mut accepted = None;
        if method == Method::Elda {
            let (_, u) = u_from_gradient(&x, &grads.grad_f, reg, eps, alpha, tau_k, cfg.gradient_mode)?;
            let step_sq = diff_sq(&u, &x);
            // the first clause needs no function value
            if grad_norm <= cfg.effective_c(alpha) * step_sq.sqrt() && u.iter().all(|v| v.is_finite()) {
                let change = phi_change(fid, reg, &x, &u, eps)?;
                if check_condition_u(grad_norm, change, step_sq, cfg.effective_c(alpha), cfg.iota) {
                    accepted = Some((u, change, Branch::U, 0, alpha));
                }
            }
        }
        let (x_next, change, branch, backtracks, alpha_used) = match accepted {
            Some(a) => a,
            None => {
                let ls = line_search(
                    &x,
                    &grads.grad_phi,
                    fid,
                    reg,
                    eps,
                    alpha,
                    cfg.rho,
                    cfg.tau,
                    cfg.max_backtracks,
                    k,
                )?;
                (ls.v, ls.phi_change, Branch::V, ls.backtracks, ls.alpha)
            }
        };
        if x_next.iter().any(|v| !v.is_finite()) || !change.is_finite() {
            return Err(Error::NonFiniteIterate(k));
        }
        let step_sq = diff_sq(&x_next, &x);
        let phi_next = phi + change;
        let (_, mut next_grads) = gradients(fid, reg, &x_next, eps)?;
        let grad_norm_next = norm(&next_grads.grad_phi);

        let eps_next = if cfg.freeze_eps {
            eps
        } else {
            epsilon_update(eps, grad_norm_next, cfg.sigma, cfg.gamma)
        };
        let mut phi_new = phi_next;
        if eps_next != eps {
            phi_new = phi_next + reg.smoothing_change(&x_next, eps, eps_next)?;
            next_grads = gradients(fid, reg, &x_next, eps_next)?.1;
        }
        let ms = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
        records.push(IterationRecord {
            k,
            eps,
            phi,
            grad_norm,
            branch,
            backtracks,
            alpha: alpha_used,
            step_norm: step_sq.sqrt(),
            ms,
            step_sq,
            phi_change: change,
            phi_next,
            grad_norm_next,
            eps_next,
        });
        let eps_k = eps;
        x = x_next;
        grads = next_grads;
        phi = phi_new;
        eps = eps_next;
        if !cfg.freeze_eps && cfg.sigma * eps_k < cfg.eps_tol {
            termination = Termination::Tolerance;
            break;
        }
    }

    let trace = SolverTrace {
        records: std::mem::take(records),
        locations: reg.locations(),
        eps0: cfg.eps0,
        gamma: cfg.gamma,
        iota: cfg.iota,
        tau: cfg.tau,
        final_phi: phi,
        final_eps: eps,
        final_grad_norm: norm(&grads.grad_phi),
        termination,
    };
    Ok(SolverOutput { x, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::config::StepRule;
    use crate::solver::problem::{DenseLeastSquares, SmoothedL1, ZeroRegularizer};

    fn scalar() -> DenseLeastSquares {
        DenseLeastSquares::new(1, 1, vec![2.0], vec![4.0]).unwrap()
    }

    #[test]
    fn u_candidate_scalar_example() {
        let (z, u) = u_candidate(&[0.0], &scalar(), &ZeroRegularizer { locations: 1 }, 1e-3, 0.1, 0.05, GradientMode::Exact)
            .unwrap();
        assert!((z[0] - 0.8).abs() < 1e-15);
        assert!((u[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn u_candidate_fixed_point() {
        let (_, u) = u_candidate(&[2.0], &scalar(), &ZeroRegularizer { locations: 1 }, 1e-3, 0.1, 0.05, GradientMode::Exact)
            .unwrap();
        assert_eq!(u, vec![2.0]);
    }

    #[test]
    fn condition_u_examples() {
        // u = x with a nonzero gradient
        assert!(!check_condition_u(0.5, 0.0, 0.0, 10.0, 1.0));
        assert!(check_condition_u(1.0, -1.0, 1.0, 1.0, 1.0));
        // both clauses tight
        assert!(check_condition_u(1.0, -1.0, 1.0, 1.0, 2.0));
        assert!(!check_condition_u(1.0, -1.0 + 1e-12, 1.0, 1.0, 2.0));
        assert!(!check_condition_u(1.0 + 1e-12, -1.0, 1.0, 1.0, 2.0));
        // ascent
        assert!(!check_condition_u(1.0, 0.1, 1.0, 100.0, 1e-9));
    }

    #[test]
    fn epsilon_update_examples() {
        assert_eq!(epsilon_update(0.01, 0.005, 1.0, 0.5), 0.01);
        assert_eq!(epsilon_update(0.01, 0.0, 1.0, 0.5), 0.005);
        assert_eq!(epsilon_update(0.01, 0.004, 1.0, 0.5), 0.005);
    }

    #[test]
    fn line_search_examples() {
        let zero = ZeroRegularizer { locations: 1 };
        let r = v_candidate_with_linesearch(&[2.0], &scalar(), &zero, 1e-3, 1.0, 0.5, 0.1, 60).unwrap();
        assert_eq!((r.v.clone(), r.backtracks), (vec![2.0], 0));

        // phi = (2x-4)^2/2 from 0: curvature 4
        let r = v_candidate_with_linesearch(&[0.0], &scalar(), &zero, 1e-3, 1.0, 0.5, 0.1, 60).unwrap();
        assert!(r.backtracks > 0 && r.backtracks < 60);
        assert!(r.phi_change < 0.0);
        // simulate the scalar search independently
        let (mut alpha, mut n) = (1.0, 0);
        loop {
            let v: f64 = 0.0 - alpha * -8.0;
            if 0.5 * (2.0 * v - 4.0f64).powi(2) - 8.0 <= -0.1 * v * v {
                break;
            }
            alpha *= 0.5;
            n += 1;
        }
        assert_eq!(r.backtracks, n);

        // alpha below 1/(tau + L/2) needs no shrink
        let r = v_candidate_with_linesearch(&[0.0], &scalar(), &zero, 1e-3, 1.0 / (0.1 + 2.0), 0.5, 0.1, 60).unwrap();
        assert_eq!(r.backtracks, 0);
    }

    #[test]
    fn line_search_failure_is_reported() {
        // a gradient pointing uphill can never satisfy the decrease test
        struct Liar;
        impl Fidelity for Liar {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &[f64]) -> Result<f64> {
                Ok(x[0] * x[0])
            }
            fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((x[0] * x[0], vec![-2.0 * x[0] - 1.0]))
            }
        }
        let cfg = SolverConfig {
            alpha: StepRule::Constant(1.0),
            max_iters: 1,
            max_backtracks: 5,
            ..Default::default()
        };
        let err = run(&[1.0], &Liar, &ZeroRegularizer { locations: 1 }, &cfg, Method::PlainGd).unwrap_err();
        assert!(matches!(err, Error::LineSearchFailure { backtracks: 5, .. }));
    }

    #[test]
    fn failure_keeps_completed_iterations() {
        // honest gradient until x drops below 0.3
        struct LateLiar;
        impl Fidelity for LateLiar {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &[f64]) -> Result<f64> {
                Ok(x[0] * x[0])
            }
            fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
                let g = if x[0] > 0.3 { 2.0 * x[0] } else { -1.0 };
                Ok((x[0] * x[0], vec![g]))
            }
        }
        let cfg = SolverConfig {
            alpha: StepRule::Constant(0.25),
            max_iters: 10,
            max_backtracks: 5,
            ..Default::default()
        };
        let failure = run_recorded(&[1.0], &LateLiar, &ZeroRegularizer { locations: 1 }, &cfg, Method::PlainGd)
            .unwrap_err();
        assert!(matches!(failure.error, Error::LineSearchFailure { iteration: 2, .. }));
        assert_eq!(failure.records.len(), 2);
        assert_eq!(failure.records[1].phi, 0.25);
    }

    #[test]
    fn zero_iterations_return_input() {
        let cfg = SolverConfig {
            max_iters: 0,
            ..Default::default()
        };
        let out = run(&[0.3], &scalar(), &ZeroRegularizer { locations: 1 }, &cfg, Method::Elda).unwrap();
        assert_eq!(out.x, vec![0.3]);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn converges_to_least_squares_solution() {
        // [[2,1],[1,3]] x = [1,2] -> x = [0.2, 0.6]
        let f = DenseLeastSquares::new(2, 2, vec![2.0, 1.0, 1.0, 3.0], vec![1.0, 2.0]).unwrap();
        let cfg = SolverConfig {
            max_iters: 2000,
            power_iterations: 100,
            ..Default::default()
        };
        let out = run(&[0.0, 0.0], &f, &ZeroRegularizer { locations: 2 }, &cfg, Method::Elda).unwrap();
        assert!((out.x[0] - 0.2).abs() < 1e-8 && (out.x[1] - 0.6).abs() < 1e-8, "{:?}", out.x);
        assert!(out.trace.final_grad_norm <= 1e-8);
        assert!(out.trace.check_monotone().is_empty());
        assert!(out.trace.check_lyapunov().is_empty());
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let f = DenseLeastSquares::new(3, 2, vec![1.0, 0.5, -0.3, 2.0, 0.7, 0.1], vec![1.0, -1.0, 0.5]).unwrap();
        let reg = SmoothedL1 {
            weight: 0.3,
            inexact_gain: 1.0,
            locations: 2,
        };
        let cfg = SolverConfig::default();
        let a = run(&[0.4, 0.4], &f, &reg, &cfg, Method::Elda).unwrap();
        let b = run(&[0.4, 0.4], &f, &reg, &cfg, Method::Elda).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    }

    #[test]
    fn nonsmooth_problem_satisfies_trace_invariants() {
        let f = DenseLeastSquares::new(3, 3, vec![1.0, 0.2, 0.0, 0.2, 1.5, 0.3, 0.0, 0.3, 0.8], vec![2.0, -1.5, 1.0])
            .unwrap();
        for gain in [1.0, -5.0] {
            let reg = SmoothedL1 {
                weight: 0.1,
                inexact_gain: gain,
                locations: 3,
            };
            let cfg = SolverConfig {
                max_iters: 500,
                gradient_mode: GradientMode::Inexact,
                ..Default::default()
            };
            let out = run(&[1.0, -1.0, 0.5], &f, &reg, &cfg, Method::Elda).unwrap();
            let t = &out.trace;
            assert!(t.check_monotone().is_empty());
            assert!(t.check_lyapunov().is_empty(), "{:?}", t.check_lyapunov());
            assert!(t.check_sufficient_decrease().is_empty());
            assert!(t.check_eps_trajectory().is_empty());
            assert!(t.check_backtracks(60).is_empty());
            assert!(
                t.records.iter().any(|r| r.eps_next < r.eps),
                "no smoothing reduction happened: gain {gain} len {} final grad {:e} x {:?} u_ratio {}",
                t.len(),
                t.final_grad_norm,
                out.x,
                t.u_ratio()
            );
            if gain < 0.0 {
                // the reversed regularizer gradient makes every u-step ascend
                assert!(t.v_count() > 0);
            }
        }
    }

    #[test]
    fn terminates_on_tolerance() {
        let f = DenseLeastSquares::new(1, 1, vec![1.0], vec![0.5]).unwrap();
        let reg = SmoothedL1 {
            weight: 0.1,
            inexact_gain: 1.0,
            locations: 1,
        };
        let cfg = SolverConfig {
            max_iters: 10_000,
            eps_tol: 1e-6,
            ..Default::default()
        };
        let out = run(&[0.0], &f, &reg, &cfg, Method::Elda).unwrap();
        assert_eq!(out.trace.termination, Termination::Tolerance);
        assert!(cfg.sigma * out.trace.final_eps < cfg.eps_tol);
        // soft-threshold solution of 1/2 (x - 0.5)^2 + 0.1 |x|
        assert!((out.x[0] - 0.4).abs() < 1e-5);
    }
}
