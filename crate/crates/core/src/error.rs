use thiserror::Error;

use crate::polyproj::ProjectionResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("constraint {index} evaluated to a non-finite value ({value}) at t = {t}")]
    Evaluation { index: usize, t: f64, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid assumption parameters: {0}")]
    InvalidParams(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("initial configuration violates constraint {index} (g = {value:e})")]
    InfeasibleInitial { index: usize, value: f64 },

    #[error("gradient of constraint {0} vanishes; the linearization is undefined")]
    ZeroGradient(usize),

    #[error("disk centers {i} and {j} coincide; the pair gradient is undefined")]
    CoincidentCenters { i: usize, j: usize },

    #[error("polyhedron appears empty (multiplier norm {multiplier_norm:e})")]
    Infeasible { multiplier_norm: f64 },

    #[error("projection stopped after {iterations} iterations with KKT residual {residual:e}")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        best: Box<ProjectionResult>,
    },

    #[error("no subset of constraints yields a KKT point; the polyhedron is empty")]
    NoKktPoint,

    #[error("oracle enumeration supports at most {max} half-spaces, got {found}")]
    TooManyHalfSpaces { max: usize, found: usize },

    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("computed configuration violates constraint {index} (g = {value:e}); step size likely inadmissible")]
    FeasibilityViolation { index: usize, value: f64 },

    #[error("active gradients are positively linearly dependent (|sum| = {combined_norm:e}, weights sum {weight_sum:e})")]
    DegenerateGradients { combined_norm: f64, weight_sum: f64 },

    #[error("initial placement failed: {placed} disks placed after {rejected} rejected draws")]
    PlacementFailure { placed: usize, rejected: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("step {index} failed: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Unwraps a [`Error::Step`] to the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}
