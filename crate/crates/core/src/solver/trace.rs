use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    U,
    V,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::U => "u",
            Branch::V => "v",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `sigma * eps_k < eps_tol`.
    Tolerance,
    MaxIterations,
}

/// One completed iteration `k -> k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub eps: f64,
    /// `phi_{eps_k}(x_k)`.
    pub phi: f64,
    /// `||grad phi_{eps_k}(x_k)||`.
    pub grad_norm: f64,
    pub branch: Branch,
    pub backtracks: usize,
    pub alpha: f64,
    pub step_norm: f64,
    pub ms: f64,
    /// `||x_{k+1} - x_k||^2` as used by the acceptance test.
    pub step_sq: f64,
    /// `phi_{eps_k}(x_{k+1}) - phi_{eps_k}(x_k)`, evaluated in difference form.
    pub phi_change: f64,
    /// `phi + phi_change`.
    pub phi_next: f64,
    /// `||grad phi_{eps_k}(x_{k+1})||`, the smoothing-update test value.
    pub grad_norm_next: f64,
    /// `eps_{k+1}`.
    pub eps_next: f64,
}

/// Per-iteration record of a run plus its final state.
///
/// `phi` values are `phi_{eps_0}(x_0)` plus the accumulated per-step
/// changes, so they agree with a fresh evaluation to rounding of `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    /// Location count `m` of the smoothing offset.
    pub locations: usize,
    pub eps0: f64,
    pub gamma: f64,
    pub iota: f64,
    pub tau: f64,
    /// `phi_{eps_K}(x_K)` at the returned iterate.
    pub final_phi: f64,
    pub final_eps: f64,
    pub final_grad_norm: f64,
    pub termination: Termination,
}

pub const CSV_HEADER: &str = "k,eps,phi,grad_norm,branch,backtracks,alpha,step_norm,ms";

/// A failed trace property with the offending iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub what: String,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fraction of iterations that took the u-candidate.
    pub fn u_ratio(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.branch == Branch::U).count() as f64 / self.records.len() as f64
    }

    pub fn v_count(&self) -> usize {
        self.records.iter().filter(|r| r.branch == Branch::V).count()
    }

    pub fn max_backtracks(&self) -> usize {
        self.records.iter().map(|r| r.backtracks).max().unwrap_or(0)
    }

    pub fn min_grad_norm(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.grad_norm)
            .chain(std::iter::once(self.final_grad_norm))
            .fold(f64::INFINITY, f64::min)
    }

    /// `phi_{eps_k}(x_k)` for `k = 0..=K` and the matching `eps_k`.
    pub fn phi_sequence(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.phi, r.eps))
            .chain(std::iter::once((self.final_phi, self.final_eps)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.records.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{:e},{:e},{:e},{},{},{:e},{:e},{}",
                r.k,
                r.eps,
                r.phi,
                r.grad_norm,
                r.branch.as_str(),
                r.backtracks,
                r.alpha,
                r.step_norm,
                r.ms
            )
            .expect("writing to a String");
        }
        s
    }

    /// `phi_{eps}(x_{k+1}) <= phi_{eps}(x_k)` whenever `eps` is unchanged.
    pub fn check_monotone(&self) -> Vec<Violation> {
        let seq = self.phi_sequence();
        let mut out = Vec::new();
        for (k, r) in self.records.iter().enumerate() {
            if r.phi_change > 0.0 || r.phi_next > r.phi {
                out.push(Violation {
                    k,
                    what: format!("phi rose within iteration: {:e} -> {:e}", r.phi, r.phi_next),
                });
            }
            let (next_phi, next_eps) = seq[k + 1];
            if next_eps == r.eps && next_phi > r.phi {
                out.push(Violation {
                    k,
                    what: format!("phi rose at fixed eps: {:e} -> {:e}", r.phi, next_phi),
                });
            }
        }
        out
    }

    /// `phi_{eps_{k+1}}(x_{k+1}) + m eps_{k+1}/2 <= phi_{eps_k}(x_k) + m eps_k/2`.
    pub fn check_lyapunov(&self) -> Vec<Violation> {
        let m = self.locations as f64;
        let seq = self.phi_sequence();
        seq.windows(2)
            .enumerate()
            .filter_map(|(k, w)| {
                let before = w[0].0 + m * w[0].1 / 2.0;
                let after = w[1].0 + m * w[1].1 / 2.0;
                (after > before).then(|| Violation {
                    k,
                    what: format!("Lyapunov value rose: {before:e} -> {after:e}"),
                })
            })
            .collect()
    }

    /// Each accepted step satisfies its own decrease clause.
    pub fn check_sufficient_decrease(&self) -> Vec<Violation> {
        self.records
            .iter()
            .filter_map(|r| {
                let bound = match r.branch {
                    Branch::U => -0.5 * self.iota * r.step_sq,
                    Branch::V => -self.tau * r.step_sq,
                };
                (r.phi_change > bound).then(|| Violation {
                    k: r.k,
                    what: format!(
                        "{}-step decrease {:e} above bound {bound:e}",
                        r.branch.as_str(),
                        r.phi_change
                    ),
                })
            })
            .collect()
    }

    /// `eps_k = eps0 gamma^{r_k}` with `r_k` nondecreasing by at most one.
    pub fn check_eps_trajectory(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut level = 0i32;
        for r in &self.records {
            let expected = self.eps0 * self.gamma.powi(level);
            if (r.eps - expected).abs() > 1e-12 * expected {
                out.push(Violation {
                    k: r.k,
                    what: format!("eps {:e} is not eps0 gamma^{level}", r.eps),
                });
            }
            if r.eps_next < r.eps {
                level += 1;
            } else if r.eps_next > r.eps {
                out.push(Violation {
                    k: r.k,
                    what: "eps increased".into(),
                });
            }
        }
        out
    }

    pub fn check_backtracks(&self, limit: usize) -> Vec<Violation> {
        self.records
            .iter()
            .filter(|r| r.backtracks > limit)
            .map(|r| Violation {
                k: r.k,
                what: format!("{} backtracks", r.backtracks),
            })
            .collect()
    }
}
