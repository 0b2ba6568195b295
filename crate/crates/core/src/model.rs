//! Problem model: configurations, inequality constraints, the perturbation
//! field and the assumption constants of a sweeping process.
//!
//! A problem is the data of
//!
//! ```text
//!   dq/dt + N(Q(t), q) ∋ f(t, q),   q(0) = q0,
//!   Q(t) = { q : g_i(t, q) >= 0 for every i },
//! ```
//!
//! where every `g_i(t, ·)` is convex. Constraints are assumed evaluable and
//! differentiable on all of `R^d`; no neighbourhood of the feasible set is
//! represented separately. The margin constant `c` therefore only lives in
//! [`AssumptionParams`].
//!
//! All evaluators must be pure: problems are shared across threads by
//! reference.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseVector;
use crate::FEAS_TOL;

/// A point of the state space `R^d`. Always finite, `d >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Configuration(Vec<f64>);

impl Configuration {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidConfiguration("dimension must be at least 1".into()));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "coordinate {i} is not finite ({})",
                coords[i]
            )));
        }
        Ok(Self(coords))
    }

    /// Skips validation; for values produced by the solver itself.
    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|v| v.is_finite()));
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Configuration {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(d)?;
        Configuration::new(coords).map_err(serde::de::Error::custom)
    }
}

/// One inequality constraint `g(t, q) >= 0` with `g(t, ·)` convex.
pub trait Constraint: Send + Sync {
    fn value(&self, t: f64, q: &[f64]) -> f64;

    /// Spatial gradient `∇_q g(t, q)`.
    fn gradient(&self, t: f64, q: &[f64]) -> Result<SparseVector>;

    /// `∂_t g(t, q)` when known analytically.
    fn time_derivative(&self, _t: f64, _q: &[f64]) -> Option<f64> {
        None
    }
}

/// `g(t, q) = <normal, q> - offset - rate * t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    pub normal: SparseVector,
    pub offset: f64,
    pub rate: f64,
}

impl AffineConstraint {
    pub fn new(normal: SparseVector, offset: f64) -> Self {
        Self { normal, offset, rate: 0.0 }
    }

    pub fn moving(normal: SparseVector, offset: f64, rate: f64) -> Self {
        Self { normal, offset, rate }
    }
}

impl Constraint for AffineConstraint {
    fn value(&self, t: f64, q: &[f64]) -> f64 {
        self.normal.dot(q) - self.offset - self.rate * t
    }

    fn gradient(&self, _t: f64, _q: &[f64]) -> Result<SparseVector> {
        Ok(self.normal.clone())
    }

    fn time_derivative(&self, _t: f64, _q: &[f64]) -> Option<f64> {
        Some(-self.rate)
    }
}

type ValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// A constraint assembled from closures with a dense gradient.
pub struct FnConstraint {
    value: Box<ValueFn>,
    gradient: Box<GradFn>,
}

impl FnConstraint {
    pub fn new<V, G>(value: V, gradient: G) -> Self
    where
        V: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl Constraint for FnConstraint {
    fn value(&self, t: f64, q: &[f64]) -> f64 {
        (self.value)(t, q)
    }

    fn gradient(&self, t: f64, q: &[f64]) -> Result<SparseVector> {
        Ok(SparseVector::from_dense(&(self.gradient)(t, q)))
    }
}

/// The perturbation field `f(t, q)`.
///
/// Convergence at order 1/2 needs `f` Lipschitz in `q` and 1/2-Hölder in `t`;
/// that regularity is the caller's responsibility (autonomous fields satisfy
/// the time condition trivially).
pub trait Perturbation: Send + Sync {
    fn eval(&self, t: f64, q: &[f64]) -> Vec<f64>;
}

impl<F> Perturbation for F
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync,
{
    fn eval(&self, t: f64, q: &[f64]) -> Vec<f64> {
        self(t, q)
    }
}

pub struct SweepingProblem {
    constraints: Vec<Box<dyn Constraint>>,
    perturbation: Box<dyn Perturbation>,
    initial: Configuration,
    horizon: f64,
}

impl std::fmt::Debug for SweepingProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SweepingProblem")
            .field("dimension", &self.dim())
            .field("constraints", &self.constraints.len())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SweepingProblem {
    /// Validates the horizon, the field dimension and the feasibility of the
    /// initial configuration at `t = 0`.
    pub fn new(
        constraints: Vec<Box<dyn Constraint>>,
        perturbation: Box<dyn Perturbation>,
        initial: Configuration,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidProblem(format!("horizon must be positive, got {horizon}")));
        }
        let problem = Self {
            constraints,
            perturbation,
            initial,
            horizon,
        };
        let f0 = problem.perturbation.eval(0.0, &problem.initial);
        if f0.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                found: f0.len(),
            });
        }
        let values = evaluate_all(&problem, 0.0, &problem.initial)?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v < -FEAS_TOL)
        {
            return Err(Error::InfeasibleInitial { index, value });
        }
        Ok(problem)
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn constraints(&self) -> &[Box<dyn Constraint>] {
        &self.constraints
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn initial(&self) -> &Configuration {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn perturbation(&self, t: f64, q: &[f64]) -> Vec<f64> {
        self.perturbation.eval(t, q)
    }

    /// Same data on a different time horizon.
    pub fn with_horizon(self, horizon: f64) -> Result<Self> {
        Self::new(self.constraints, self.perturbation, self.initial, horizon)
    }

    pub(crate) fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: q.len(),
            });
        }
        Ok(())
    }
}

/// Constants of the standing assumptions on the constraints.
///
/// `alpha <= |∇g_i| <= beta`, `|∂_t g_i| <= beta`, Hessian and
/// `∂_t ∇g_i` bounded by `m_bound`, and `gamma` the positive-linear
/// independence constant on the constraints with `g_i <= rho`.
/// `c_margin` and `k_lip` (Hausdorff-Lipschitz constant of `t -> Q(t)`)
/// are carried for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionParams {
    pub alpha: f64,
    pub beta: f64,
    pub m_bound: f64,
    pub rho: f64,
    pub gamma: f64,
    pub c_margin: f64,
    pub k_lip: f64,
}

impl AssumptionParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("m_bound", self.m_bound),
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("c_margin", self.c_margin),
            ("k_lip", self.k_lip),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.alpha > self.beta {
            return Err(Error::InvalidParams(format!(
                "alpha ({}) exceeds beta ({})",
                self.alpha, self.beta
            )));
        }
        if self.gamma < 1.0 {
            return Err(Error::InvalidParams(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Values `g_i(t, q)` of every constraint, in registration order.
pub fn evaluate_all(problem: &SweepingProblem, t: f64, q: &[f64]) -> Result<Vec<f64>> {
    problem.check_dim(q)?;
    problem
        .constraints
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let value = c.value(t, q);
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::Evaluation { index, t, value })
            }
        })
        .collect()
}

/// Indices with `g_i(t, q) <= rho` (up to [`FEAS_TOL`]). With `rho = 0` this
/// is the active set. Infeasible `q` is accepted; non-finite values are never
/// reported as active.
pub fn active_set(problem: &SweepingProblem, t: f64, q: &[f64], rho: f64) -> Vec<usize> {
    problem
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.value(t, q) <= rho + FEAS_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// `min_i g_i(t, q) >= -tol`.
pub fn is_feasible(problem: &SweepingProblem, t: f64, q: &[f64], tol: f64) -> Result<bool> {
    Ok(evaluate_all(problem, t, q)?.iter().all(|&v| v >= -tol))
}

/// Smallest constraint value, `+inf` for an unconstrained problem.
pub fn feasibility_margin(problem: &SweepingProblem, t: f64, q: &[f64]) -> Result<f64> {
    Ok(evaluate_all(problem, t, q)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Largest discrepancy between the analytic gradient and central finite
/// differences over all coordinate directions. Returns `+inf` when the
/// gradient cannot be evaluated.
pub fn gradient_check(constraint: &dyn Constraint, t: f64, q: &[f64], step: f64) -> f64 {
    let grad = match constraint.gradient(t, q) {
        Ok(g) => g.to_dense(q.len()),
        Err(_) => return f64::INFINITY,
    };
    let mut probe = q.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..q.len() {
        probe[j] = q[j] + step;
        let plus = constraint.value(t, &probe);
        probe[j] = q[j] - step;
        let minus = constraint.value(t, &probe);
        probe[j] = q[j];
        let fd = (plus - minus) / (2.0 * step);
        worst = worst.max((fd - grad[j]).abs());
    }
    worst
}

/// `g(t, (x+y)/2) - (g(t, x) + g(t, y)) / 2`; nonpositive for convex `g`.
pub fn midpoint_convexity_gap(constraint: &dyn Constraint, t: f64, x: &[f64], y: &[f64]) -> f64 {
    let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    constraint.value(t, &mid) - 0.5 * (constraint.value(t, x) + constraint.value(t, y))
}
