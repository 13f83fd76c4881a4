//! Descent solver for the smoothed problem, with per-iteration tracing.

mod algorithm;
mod config;
mod problem;
mod trace;

pub use algorithm::{
    check_condition_u, epsilon_update, run, run_recorded, u_candidate, v_candidate_with_linesearch, LineSearchResult,
    SolverFailure, SolverOutput,
};
pub use config::{CScaling, Method, SolverConfig, StepRule};
pub use problem::{DenseLeastSquares, Fidelity, SmoothedL1, SmoothedRegularizer, SmoothedValue, ZeroRegularizer};
pub use trace::{Branch, IterationRecord, SolverTrace, Termination, Violation, CSV_HEADER};
