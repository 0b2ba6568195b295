//! The prediction-correction scheme on a uniform grid, and the piecewise
//! linear / piecewise constant reconstructions built from its nodes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{evaluate_all, Configuration, SweepingProblem};
use crate::polyproj::{linearize, linearize_filtered, project_with, ProjectionOptions};
use crate::FEAS_TOL;

/// Drops half-spaces of constraints that are far from active.
///
/// A constraint with `g_i(t_{k+1}, q_k) > per_unit_step * h + safety` is left
/// out of the step polyhedron. A full feasibility check runs after every
/// step and, if an omitted constraint ends up violated, the step is redone
/// with every constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pruning {
    pub per_unit_step: f64,
    pub safety: f64,
}

impl Pruning {
    pub fn threshold(&self, h: f64) -> f64 {
        self.per_unit_step * h + self.safety
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub projection: ProjectionOptions,
    pub pruning: Option<Pruning>,
    pub feas_tol: f64,
    /// Also compute `d_{Qc(t_{k+1}, q_k)}(q_k)` (one extra projection, free
    /// whenever `q_k` already lies in the polyhedron).
    pub measure_set_motion: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            projection: ProjectionOptions::default(),
            pruning: None,
            feas_tol: FEAS_TOL,
            measure_set_motion: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub iterations: usize,
    pub residual: f64,
    /// `|q_{k+1} - (q_k + h f(t_k, q_k))|`, the distance of the prediction to
    /// the step polyhedron.
    pub prediction_distance: f64,
    /// `d_{Qc(t_{k+1}, q_k)}(q_k)`; zero when not measured.
    pub set_motion_distance: f64,
    pub halfspaces: usize,
    /// `min_i g_i(t_{k+1}, q_{k+1})`.
    pub feasibility_margin: f64,
}

/// Nodes `q_k` at `t_k = k T / n`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    n: usize,
    h: f64,
    horizon: f64,
    times: Vec<f64>,
    nodes: Vec<Configuration>,
    steps: Vec<StepRecord>,
}

impl DiscreteTrajectory {
    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[Configuration] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &Configuration {
        &self.nodes[k]
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.steps
    }

    /// Empirical discrete velocity bound `max_k |q_{k+1} - q_k| / h`.
    pub fn max_velocity(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| linalg::distance(&w[0], &w[1]) / self.h)
            .fold(0.0, f64::max)
    }

    /// Index `k` with `t ∈ [t_k, t_{k+1})`, or `n` at `t = T`.
    pub fn locate(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::OutOfRange { t, horizon: self.horizon });
        }
        if t == self.horizon {
            return Ok(self.n);
        }
        let mut k = ((t / self.h).floor() as usize).min(self.n - 1);
        while k > 0 && self.times[k] > t {
            k -= 1;
        }
        while k + 1 < self.n && self.times[k + 1] <= t {
            k += 1;
        }
        Ok(k)
    }

    /// Piecewise linear interpolant through the nodes.
    pub fn interpolate(&self, t: f64) -> Result<Configuration> {
        let k = self.locate(t)?;
        if k == self.n || t == self.times[k] {
            return Ok(self.nodes[k].clone());
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let theta = (t - t0) / (t1 - t0);
        let point = self.nodes[k]
            .iter()
            .zip(self.nodes[k + 1].iter())
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        Ok(Configuration::from_raw(point))
    }

    /// `(ρ(t), θ(t)) = (t_k, t_{k+1})` on `[t_k, t_{k+1})`, `(T, T)` at `T`.
    pub fn grid_maps(&self, t: f64) -> Result<(f64, f64)> {
        let k = self.locate(t)?;
        if k == self.n {
            return Ok((self.horizon, self.horizon));
        }
        Ok((self.times[k], self.times[k + 1]))
    }

    /// Piecewise constant field `f(t_k, q_k)` on `[t_k, t_{k+1})`, with
    /// `f(t_{n-1}, q_{n-1})` at `T`.
    pub fn sampled_f(&self, problem: &SweepingProblem, t: f64) -> Result<Vec<f64>> {
        let k = self.locate(t)?.min(self.n - 1);
        Ok(problem.perturbation(self.times[k], &self.nodes[k]))
    }
}

/// One step from `(t_k, q_k)` with default options.
pub fn step(problem: &SweepingProblem, t_k: f64, q_k: &[f64], h: f64) -> Result<(Configuration, StepRecord)> {
    let mut warm = vec![0.0; problem.constraint_count()];
    step_between(problem, t_k, t_k + h, q_k, &StepOptions::default(), &mut warm)
}

/// Projects `q_k + (t_next - t_k) f(t_k, q_k)` onto the tangent polyhedron
/// at `(t_next, q_k)`.
///
/// `warm` holds one multiplier per problem constraint; it seeds the
/// projection and is overwritten with the new multipliers.
pub fn step_between(
    problem: &SweepingProblem,
    t_k: f64,
    t_next: f64,
    q_k: &[f64],
    opts: &StepOptions,
    warm: &mut [f64],
) -> Result<(Configuration, StepRecord)> {
    problem.check_dim(q_k)?;
    let h = t_next - t_k;
    if !(h > 0.0) {
        return Err(Error::InvalidProblem(format!("step size must be positive, got {h}")));
    }
    let f = problem.perturbation(t_k, q_k);
    if f.len() != q_k.len() {
        return Err(Error::DimensionMismatch {
            expected: q_k.len(),
            found: f.len(),
        });
    }
    let prediction: Vec<f64> = q_k.iter().zip(&f).map(|(q, v)| q + h * v).collect();

    let threshold = opts.pruning.map(|p| p.threshold(h));
    let mut outcome = attempt(problem, t_next, q_k, &prediction, threshold, opts, warm)?;
    if outcome.margin < -opts.feas_tol && threshold.is_some() {
        log::debug!("pruned step violated an omitted constraint; retrying with all constraints");
        outcome = attempt(problem, t_next, q_k, &prediction, None, opts, warm)?;
    }
    if outcome.margin < -opts.feas_tol {
        return Err(Error::FeasibilityViolation {
            index: outcome.worst,
            value: outcome.margin,
        });
    }

    warm.iter_mut().for_each(|w| *w = 0.0);
    for (&src, &l) in outcome.poly.sources().iter().zip(&outcome.multipliers) {
        warm[src] = l;
    }

    let set_motion_distance = if opts.measure_set_motion {
        let local: Vec<f64> = outcome.poly.sources().iter().map(|&i| warm[i]).collect();
        let r = project_with(q_k, &outcome.poly, &opts.projection, Some(&local))?;
        linalg::distance(q_k, &r.point)
    } else {
        0.0
    };

    let record = StepRecord {
        iterations: outcome.iterations,
        residual: outcome.residual,
        prediction_distance: linalg::distance(&prediction, &outcome.point),
        set_motion_distance,
        halfspaces: outcome.poly.len(),
        feasibility_margin: outcome.margin,
    };
    Ok((outcome.point, record))
}

struct Attempt {
    poly: crate::polyproj::Polyhedron,
    point: Configuration,
    multipliers: Vec<f64>,
    residual: f64,
    iterations: usize,
    margin: f64,
    worst: usize,
}

fn attempt(
    problem: &SweepingProblem,
    t_next: f64,
    q_k: &[f64],
    prediction: &[f64],
    threshold: Option<f64>,
    opts: &StepOptions,
    warm: &[f64],
) -> Result<Attempt> {
    let poly = match threshold {
        Some(th) => linearize_filtered(problem, t_next, q_k, |v| v <= th)?,
        None => linearize(problem, t_next, q_k)?,
    };
    let local: Vec<f64> = poly.sources().iter().map(|&i| warm[i]).collect();
    let proj = project_with(prediction, &poly, &opts.projection, Some(&local))?;
    let values = evaluate_all(problem, t_next, &proj.point)?;
    let (worst, margin) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    Ok(Attempt {
        poly,
        point: proj.point,
        multipliers: proj.multipliers,
        residual: proj.residual,
        iterations: proj.iterations,
        margin,
        worst,
    })
}

pub fn solve(problem: &SweepingProblem, n: usize) -> Result<DiscreteTrajectory> {
    solve_with(problem, n, &StepOptions::default())
}

/// Runs `n` steps over `[0, T]`. Errors carry the index of the failing step.
pub fn solve_with(problem: &SweepingProblem, n: usize, opts: &StepOptions) -> Result<DiscreteTrajectory> {
    if n == 0 {
        return Err(Error::InvalidProblem("step count must be at least 1".into()));
    }
    let horizon = problem.horizon();
    let h = horizon / n as f64;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * horizon / n as f64).collect();
    let mut nodes = Vec::with_capacity(n + 1);
    nodes.push(problem.initial().clone());
    let mut steps = Vec::with_capacity(n);
    let mut warm = vec![0.0; problem.constraint_count()];
    for k in 0..n {
        let (next, record) = step_between(problem, times[k], times[k + 1], &nodes[k], opts, &mut warm)
            .map_err(|e| Error::Step {
                index: k,
                source: Box::new(e),
            })?;
        nodes.push(next);
        steps.push(record);
    }
    Ok(DiscreteTrajectory {
        n,
        h,
        horizon,
        times,
        nodes,
        steps,
    })
}

/// `t_i = i T / count`, `i = 1..=count`.
pub fn error_sample_times(horizon: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 * horizon / count as f64).collect()
}

/// `max_t |a(t) - b(t)|` over `samples`, using the linear interpolants.
pub fn sup_error(a: &DiscreteTrajectory, b: &DiscreteTrajectory, samples: &[f64]) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if (a.horizon - b.horizon).abs() > 1e-12 * a.horizon.abs().max(1.0) {
        return Err(Error::InvalidProblem(format!(
            "trajectories have different horizons ({} vs {})",
            a.horizon, b.horizon
        )));
    }
    samples.iter().try_fold(0.0_f64, |m, &t| {
        Ok(m.max(linalg::distance(&a.interpolate(t)?, &b.interpolate(t)?)))
    })
}
