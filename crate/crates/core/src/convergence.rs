//! Empirical order of convergence against a fine reference run.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SweepingProblem;
use crate::stepper::{error_sample_times, solve_with, sup_error, DiscreteTrajectory, StepOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOptions {
    pub h_list: Vec<f64>,
    pub h_min: f64,
    /// Number of error sample times `t_i = i T / count`.
    pub error_samples: usize,
    /// Steps below `exclusion_factor * h_min` are left out of the fit.
    pub exclusion_factor: f64,
    pub step: StepOptions,
}

impl ConvergenceOptions {
    pub fn new(h_list: Vec<f64>, h_min: f64) -> Self {
        Self {
            h_list,
            h_min,
            error_samples: 10,
            exclusion_factor: 4.0,
            step: StepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Too close to the reference step for the error proxy to be meaningful.
    NearReference,
    /// Zero error; the logarithm is undefined.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub h: f64,
    pub steps: usize,
    pub e_h: f64,
    pub excluded: Option<Exclusion>,
}

impl ConvergencePoint {
    pub fn included(&self) -> bool {
        self.excluded.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slope {
    Fitted { slope: f64, intercept: f64 },
    /// Every candidate point has zero error.
    Exact,
    /// Fewer than three usable points.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub h_min: f64,
    pub reference_steps: usize,
    pub points: Vec<ConvergencePoint>,
    pub fit: Slope,
}

/// `round(T / h)`, warning when `T / h` is not an integer.
pub fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidProblem(format!("step size must be positive, got {h}")));
    }
    let exact = horizon / h;
    let n = exact.round().max(1.0);
    if (exact - n).abs() > 1e-9 * n {
        log::warn!("T / h = {exact} is not an integer; using {n} steps (h = {})", horizon / n);
    }
    Ok(n as usize)
}

/// Ordinary least squares fit of `ln e` against `ln h`, as
/// `(slope, intercept)`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Solves at `h_min`, then at every `h` in parallel, and fits the order.
///
/// `e_h` is the largest distance between the two linear interpolants over
/// the sample times.
pub fn run_convergence(problem: &SweepingProblem, opts: &ConvergenceOptions) -> Result<ConvergenceStudy> {
    if opts.h_list.is_empty() {
        return Err(Error::InvalidProblem("h_list is empty".into()));
    }
    if opts.error_samples == 0 {
        return Err(Error::InvalidProblem("error_samples must be at least 1".into()));
    }
    if let Some(&h) = opts.h_list.iter().find(|&&h| !(h >= opts.h_min)) {
        return Err(Error::InvalidProblem(format!(
            "every h must be at least h_min = {}, got {h}",
            opts.h_min
        )));
    }
    let horizon = problem.horizon();
    let reference_steps = steps_for(horizon, opts.h_min)?;
    let reference = solve_with(problem, reference_steps, &opts.step)?;
    let samples = error_sample_times(horizon, opts.error_samples);

    let runs: Vec<(usize, DiscreteTrajectory)> = opts
        .h_list
        .par_iter()
        .map(|&h| {
            let n = steps_for(horizon, h)?;
            Ok((n, solve_with(problem, n, &opts.step)?))
        })
        .collect::<Result<_>>()?;

    let cutoff = opts.exclusion_factor * opts.h_min * (1.0 - 1e-9);
    let mut points = Vec::with_capacity(runs.len());
    for (&h, (n, traj)) in opts.h_list.iter().zip(&runs) {
        let e_h = sup_error(&reference, traj, &samples)?;
        let excluded = if h < cutoff {
            Some(Exclusion::NearReference)
        } else if e_h == 0.0 {
            Some(Exclusion::Exact)
        } else {
            None
        };
        points.push(ConvergencePoint {
            h,
            steps: *n,
            e_h,
            excluded,
        });
    }

    let usable: Vec<(f64, f64)> = points.iter().filter(|p| p.included()).map(|p| (p.h, p.e_h)).collect();
    let candidates = points.iter().filter(|p| p.excluded != Some(Exclusion::NearReference)).count();
    let exact = points.iter().filter(|p| p.excluded == Some(Exclusion::Exact)).count();
    let fit = if usable.len() >= 3 {
        fit_log_log(&usable).map_or(Slope::Unavailable, |(slope, intercept)| Slope::Fitted { slope, intercept })
    } else if candidates > 0 && exact == candidates {
        Slope::Exact
    } else {
        Slope::Unavailable
    };
    Ok(ConvergenceStudy {
        h_min: opts.h_min,
        reference_steps,
        points,
        fit,
    })
}
