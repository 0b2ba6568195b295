//! Small scenarios with known solutions.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::linalg::SparseVector;
use crate::model::{AffineConstraint, AssumptionParams, Configuration, Constraint, SweepingProblem};

use crate::crowd::DiskPair;

pub const BUILTIN_NAMES: [&str; 4] = [
    "moving-wall-1d",
    "static-wall-push-1d",
    "two-disk-headon",
    "halfplane-sweep-2d",
];

/// Radius of the disks in `two-disk-headon`.
pub const HEADON_RADIUS: f64 = 0.2;

/// Angle of the wall normal in `halfplane-sweep-2d`.
pub const SWEEP_ANGLE: f64 = std::f64::consts::PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinDefaults {
    pub horizon: f64,
    pub steps: usize,
    pub params: AssumptionParams,
}

fn linear_params() -> AssumptionParams {
    AssumptionParams {
        alpha: 1.0,
        beta: 1.0,
        m_bound: 1.0,
        rho: 1.0,
        gamma: 1.0,
        c_margin: 1.0,
        k_lip: 1.0,
    }
}

pub fn defaults(name: &str) -> Result<BuiltinDefaults> {
    let d = match name {
        "moving-wall-1d" => BuiltinDefaults {
            horizon: 1.0,
            steps: 100,
            params: linear_params(),
        },
        "static-wall-push-1d" => BuiltinDefaults {
            horizon: 2.0,
            steps: 100,
            params: linear_params(),
        },
        "two-disk-headon" => BuiltinDefaults {
            horizon: 2.0,
            steps: 200,
            params: AssumptionParams {
                alpha: SQRT_2,
                beta: SQRT_2,
                m_bound: 2.0 / HEADON_RADIUS,
                rho: HEADON_RADIUS,
                ..linear_params()
            },
        },
        "halfplane-sweep-2d" => BuiltinDefaults {
            horizon: 1.0,
            steps: 100,
            params: linear_params(),
        },
        other => return Err(unknown(other)),
    };
    Ok(d)
}

fn unknown(name: &str) -> Error {
    Error::InvalidScenario(format!(
        "unknown builtin '{name}' (available: {})",
        BUILTIN_NAMES.join(", ")
    ))
}

/// Builds the named scenario on `[0, horizon]` (the scenario default when
/// `None`).
///
/// * `moving-wall-1d`: `g = q - t`, `f = 0`, `q_0 = 0`; solution `q = t`.
/// * `static-wall-push-1d`: `g = q`, `f = -1`, `q_0 = 1`; solution
///   `q = max(1 - t, 0)`.
/// * `two-disk-headon`: disks of radius 0.2 at `(-1, 0)` and `(1, 0)` with
///   velocities `(1, 0)` and `(-1, 0)`; they touch at `t = 0.8` and stay.
/// * `halfplane-sweep-2d`: `g = <n, q> - t` with `n` at 30 degrees and `f`
///   the unit tangent; solution `q = t (n + f)`.
pub fn builtin(name: &str, horizon: Option<f64>) -> Result<SweepingProblem> {
    let horizon = horizon.unwrap_or(defaults(name)?.horizon);
    let one = |i: usize, v: f64| SparseVector::from_pairs(vec![(i, v)]);
    let (constraints, field, initial): (Vec<Box<dyn Constraint>>, Vec<f64>, Vec<f64>) = match name {
        "moving-wall-1d" => (
            vec![Box::new(AffineConstraint::moving(one(0, 1.0), 0.0, 1.0))],
            vec![0.0],
            vec![0.0],
        ),
        "static-wall-push-1d" => (
            vec![Box::new(AffineConstraint::new(one(0, 1.0), 0.0))],
            vec![-1.0],
            vec![1.0],
        ),
        "two-disk-headon" => (
            vec![Box::new(DiskPair {
                i: 0,
                j: 1,
                radius: HEADON_RADIUS,
            })],
            vec![1.0, 0.0, -1.0, 0.0],
            vec![-1.0, 0.0, 1.0, 0.0],
        ),
        "halfplane-sweep-2d" => {
            let (s, c) = SWEEP_ANGLE.sin_cos();
            (
                vec![Box::new(AffineConstraint::moving(
                    SparseVector::from_dense(&[c, s]),
                    0.0,
                    1.0,
                ))],
                vec![-s, c],
                vec![0.0, 0.0],
            )
        }
        other => return Err(unknown(other)),
    };
    let perturbation = move |_t: f64, _q: &[f64]| field.clone();
    SweepingProblem::new(constraints, Box::new(perturbation), Configuration::new(initial)?, horizon)
}

/// Closed-form solution of the named scenario at time `t`, when known for
/// every `t` (all builtins with their default data).
pub fn exact_solution(name: &str, t: f64) -> Result<Vec<f64>> {
    let q = match name {
        "moving-wall-1d" => vec![t],
        "static-wall-push-1d" => vec![(1.0 - t).max(0.0)],
        "two-disk-headon" => {
            let x = (1.0 - t).max(HEADON_RADIUS);
            vec![-x, 0.0, x, 0.0]
        }
        "halfplane-sweep-2d" => {
            let (s, c) = SWEEP_ANGLE.sin_cos();
            vec![t * (c - s), t * (s + c)]
        }
        other => return Err(unknown(other)),
    };
    Ok(q)
}
