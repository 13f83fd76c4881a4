use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GradientMode;

/// A step-size rule: a constant, a per-iteration list, or a keyword
/// (`"auto"` for `alpha`, `"alpha"` for `beta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepRule {
    Constant(f64),
    Schedule(Vec<f64>),
    Keyword(String),
}

impl StepRule {
    pub fn auto() -> Self {
        Self::Keyword("auto".into())
    }

    pub fn same_as_alpha() -> Self {
        Self::Keyword("alpha".into())
    }

    fn validate(&self, name: &str, keyword: &str, iterations: usize) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match self {
            Self::Constant(v) if positive(*v) => Ok(()),
            Self::Schedule(v) if v.len() >= iterations && v.iter().all(|a| positive(*a)) && !v.is_empty() => Ok(()),
            Self::Keyword(k) if k == keyword => Ok(()),
            other => Err(Error::InvalidParameter(format!(
                "solver.{name} must be a positive number, a list of at least {iterations} positive numbers, \
                 or \"{keyword}\"; got {other:?}"
            ))),
        }
    }

    /// Value at iteration `k`; keywords resolve to `fallback`.
    pub fn at(&self, k: usize, fallback: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Schedule(v) => v[k.min(v.len() - 1)],
            Self::Keyword(_) => fallback,
        }
    }
}

/// Which update the solver runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// u-candidate with the descent-condition safeguard.
    #[default]
    Elda,
    /// `x <- x - alpha grad phi(x)` with the same line search and smoothing
    /// schedule, no u-candidate.
    PlainGd,
}

/// How `c` enters the first clause of the u-acceptance test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CScaling {
    /// `||grad phi(x)|| <= (c / alpha_k) ||u - x||`: unit-free, since a
    /// gradient step has length `alpha_k ||grad phi||`.
    #[default]
    Step,
    /// `||grad phi(x)|| <= c ||u - x||` as written.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Backtracking shrink factor.
    pub rho: f64,
    /// Smoothing shrink factor.
    pub gamma: f64,
    pub eps0: f64,
    /// Reduction threshold constant of the smoothing update.
    pub sigma: f64,
    pub c: f64,
    pub c_scaling: CScaling,
    pub iota: f64,
    /// Sufficient-decrease constant of the safeguard line search.
    pub tau: f64,
    pub max_iters: usize,
    pub eps_tol: f64,
    pub alpha: StepRule,
    pub beta: StepRule,
    /// Transposes used for the u-candidate's regularizer gradient.
    pub gradient_mode: GradientMode,
    pub max_backtracks: usize,
    /// Power iterations for the automatic step size.
    pub power_iterations: usize,
    /// Hold `eps` at `eps0` (no reduction, no tolerance stop).
    pub freeze_eps: bool,
    /// Fill the `ms` trace column; off keeps traces byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            gamma: 0.5,
            eps0: 1e-3,
            sigma: 1.0,
            c: 10.0,
            c_scaling: CScaling::Step,
            iota: 1e-3,
            tau: 1e-3,
            max_iters: 200,
            eps_tol: 1e-8,
            alpha: StepRule::auto(),
            beta: StepRule::same_as_alpha(),
            gradient_mode: GradientMode::Exact,
            max_backtracks: 60,
            power_iterations: 30,
            freeze_eps: false,
            record_wall_time: false,
        }
    }
}

impl SolverConfig {
    /// The constant of the first acceptance clause at step size `alpha`.
    pub fn effective_c(&self, alpha: f64) -> f64 {
        match self.c_scaling {
            CScaling::Step => self.c / alpha,
            CScaling::Absolute => self.c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let checks = [
            ("rho", open_unit(self.rho)),
            ("gamma", open_unit(self.gamma)),
            ("eps0", positive(self.eps0)),
            ("sigma", positive(self.sigma)),
            ("c", positive(self.c)),
            ("iota", positive(self.iota)),
            ("tau", positive(self.tau)),
            ("eps_tol", positive(self.eps_tol)),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::InvalidParameter(format!("solver.{name} is out of range")));
        }
        self.alpha.validate("alpha", "auto", self.max_iters)?;
        self.beta.validate("beta", "alpha", self.max_iters)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SolverConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        for bad in [
            SolverConfig { rho: 1.0, ..Default::default() },
            SolverConfig { gamma: 0.0, ..Default::default() },
            SolverConfig { eps0: -1.0, ..Default::default() },
            SolverConfig { alpha: StepRule::Keyword("alpha".into()), ..Default::default() },
            SolverConfig { alpha: StepRule::Schedule(vec![1.0; 3]), ..Default::default() },
            SolverConfig { beta: StepRule::Constant(0.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn step_rule_lookup() {
        assert_eq!(StepRule::Constant(0.5).at(9, 1.0), 0.5);
        assert_eq!(StepRule::Schedule(vec![1.0, 2.0]).at(1, 0.0), 2.0);
        assert_eq!(StepRule::auto().at(3, 0.25), 0.25);
    }
}
