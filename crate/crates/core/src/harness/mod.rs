//! Schedules, trajectory recording, Monte Carlo aggregation, and the
//! experiments that check measured convergence against the theory.

mod checks;
mod engine;
mod ensemble;
pub mod rng;
mod schedule;
mod trajectory;

pub use checks::{
    bound_envelope_check, boundedness_check, compare_scans, contraction_window_check,
    expected_descent_check, talagrand_violations, updates_to_epsilon, worst_case_init, BoundMode,
    BoundednessReport, ContractionReport, DescentCheck, EnvelopeReport, ScanComparison, Violation,
    WindowStatus, WorstCaseInit, UPDATE_BUDGET, WINDOW_TOL,
};
pub use engine::{problem_hash, Engine, GaussianEngine, GridEngine};
pub use ensemble::{monte_carlo, Ensemble, EnsembleSummary};
pub use schedule::{Schedule, ScheduleIter};
pub use trajectory::{run_trial, run_trial_with, Record, Trajectory, TrajectoryMeta};
