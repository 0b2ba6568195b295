//! Prediction-correction time stepping for sweeping processes whose moving
//! set is given by finitely many convex inequality constraints.
//!
//! Each step takes an explicit Euler prediction `q_k + h f(t_k, q_k)` and
//! projects it onto the polyhedron obtained by linearizing every constraint
//! at `(t_{k+1}, q_k)`. The polyhedron lies inside the feasible set, so every
//! computed configuration is feasible.

mod active_set;
pub mod builtin;
pub mod convergence;
pub mod crowd;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod polyproj;
pub mod stepper;

pub use convergence::{run_convergence, ConvergenceOptions, ConvergencePoint, ConvergenceStudy, Exclusion, Slope};
pub use crowd::{CrowdScenario, Room};
pub use diagnostics::{
    check_metric_qualification, check_quadratic_distance, derived_constants, estimate_gamma,
    estimate_step_distance, run_diagnostics, Anchor, DerivedConstants, DiagnosticsOptions, DiagnosticsReport,
};
pub use error::{Error, Result};
pub use linalg::SparseVector;
pub use model::{
    active_set, evaluate_all, feasibility_margin, gradient_check, is_feasible, midpoint_convexity_gap,
    AffineConstraint, AssumptionParams, Configuration, Constraint, FnConstraint, Perturbation,
    SweepingProblem,
};
pub use polyproj::{
    distance, distance_single, linearize, project, project_oracle, project_with, HalfSpace, Polyhedron,
    ProjectionOptions, ProjectionResult,
};
pub use stepper::{
    error_sample_times, solve, solve_with, step, step_between, sup_error, DiscreteTrajectory, Pruning,
    StepOptions, StepRecord,
};

/// Absolute feasibility tolerance on constraint values.
pub const FEAS_TOL: f64 = 1e-9;
/// KKT residual target of the projection solver.
pub const PROJ_TOL: f64 = 1e-10;
/// Gradients shorter than this are treated as vanishing.
pub const GRAD_FLOOR: f64 = 1e-12;
