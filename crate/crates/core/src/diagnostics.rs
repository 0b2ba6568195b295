//! Sampled checks of the structural constants behind the scheme.
//!
//! None of these checks is needed to run the solver. They test whether a
//! set of user-supplied constants is consistent with a scenario: a nonzero
//! violation count means the constants are too optimistic somewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SparseVector};
use crate::model::{active_set, is_feasible, AssumptionParams, Configuration, SweepingProblem};
use crate::polyproj::{distance, distance_single, linearize, HalfSpace};
use crate::stepper::DiscreteTrajectory;
use crate::{FEAS_TOL, GRAD_FLOOR};

/// Weight vectors on the simplex per axis when `|I_ρ| <= 3`.
const GRID_RESOLUTION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// Prox-regularity radius `α / (M γ)`.
    pub eta: f64,
    /// Qualification constant `2 γ β / α`.
    pub theta: f64,
    /// Qualification radius `min(4ρ / (13β), α / (2Mγ))`.
    pub r_qual: f64,
}

pub fn derived_constants(params: &AssumptionParams) -> DerivedConstants {
    let AssumptionParams {
        alpha,
        beta,
        m_bound,
        rho,
        gamma,
        ..
    } = *params;
    DerivedConstants {
        eta: alpha / (m_bound * gamma),
        theta: 2.0 * gamma * beta / alpha,
        r_qual: (4.0 * rho / (13.0 * beta)).min(alpha / (2.0 * m_bound * gamma)),
    }
}

/// Rng for sample `index` of a run seeded with `seed`; independent of how
/// samples are scheduled across threads.
fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Lower bound on the positive-linear-independence constant γ at `(t, q)`.
///
/// Returns the largest `Σ λ_i |∇g_i| / |Σ λ_i ∇g_i|` over a set of
/// nonnegative weight vectors on `I_ρ(t, q)`: the coordinate vectors, the
/// all-ones vector with raw and normalized gradients, every pair of indices
/// with unit-normalized weights, `trials` seeded random vectors, and for
/// `|I_ρ| <= 3` a grid on the simplex. The random vectors form a prefix-stable
/// sequence, so the estimate is nondecreasing in `trials`.
pub fn estimate_gamma(problem: &SweepingProblem, t: f64, q: &[f64], rho: f64, trials: usize, seed: u64) -> Result<f64> {
    problem.check_dim(q)?;
    let active = active_set(problem, t, q, rho);
    if active.len() <= 1 {
        return Ok(1.0);
    }
    let grads: Vec<SparseVector> = active
        .iter()
        .map(|&i| problem.constraints()[i].gradient(t, q))
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = grads.iter().map(SparseVector::norm).collect();
    let dim = problem.dim();
    let mut best = 1.0f64;
    let mut sum = vec![0.0; dim];
    let mut consider = |weights: &dyn Fn(usize) -> f64| -> Result<()> {
        sum.iter_mut().for_each(|v| *v = 0.0);
        let mut weighted_norms = 0.0;
        for (k, g) in grads.iter().enumerate() {
            let w = weights(k);
            if w != 0.0 {
                g.axpy_into(w, &mut sum);
                weighted_norms += w * norms[k];
            }
        }
        if weighted_norms <= 0.0 {
            return Ok(());
        }
        let combined = linalg::norm(&sum) / weighted_norms;
        if combined < GRAD_FLOOR {
            return Err(Error::DegenerateGradients {
                combined_norm: combined,
                weight_sum: weighted_norms,
            });
        }
        best = best.max(1.0 / combined);
        Ok(())
    };

    let m = grads.len();
    consider(&|_| 1.0)?;
    consider(&|k| if norms[k] > 0.0 { 1.0 / norms[k] } else { 0.0 })?;
    for a in 0..m {
        for b in a + 1..m {
            consider(&|k| {
                if (k == a || k == b) && norms[k] > 0.0 {
                    1.0 / norms[k]
                } else {
                    0.0
                }
            })?;
        }
    }
    if m <= 3 {
        simplex_grid(m, GRID_RESOLUTION, |w| {
            consider(&|k| if norms[k] > 0.0 { w[k] / norms[k] } else { 0.0 })
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        consider(&|k| w[k])?;
    }
    Ok(best)
}

/// Calls `visit` on every point of `{ w >= 0, Σ w = 1 }` with coordinates in
/// `(1/res) ℕ`.
fn simplex_grid<F>(m: usize, res: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<()>,
{
    let mut counts = vec![0usize; m];
    fn rec<F: FnMut(&[f64]) -> Result<()>>(
        k: usize,
        left: usize,
        res: usize,
        counts: &mut [usize],
        visit: &mut F,
    ) -> Result<()> {
        if k + 1 == counts.len() {
            counts[k] = left;
            let w: Vec<f64> = counts.iter().map(|&c| c as f64 / res as f64).collect();
            return visit(&w);
        }
        for c in 0..=left {
            counts[k] = c;
            rec(k + 1, left - c, res, counts, visit)?;
        }
        Ok(())
    }
    rec(0, res, res, &mut counts, &mut visit)
}

/// For each constraint `i`: `d_{Qc_i(t, q̃)}(q) <= M/(2α) |q - q̃|² + FEAS_TOL`,
/// where `Qc_i(t, q̃)` is the half-space tangent to constraint `i` at `q̃`.
///
/// `q` should be feasible at `t`; the bound is not claimed otherwise.
pub fn check_quadratic_distance(
    problem: &SweepingProblem,
    params: &AssumptionParams,
    t: f64,
    q_tilde: &[f64],
    q: &[f64],
) -> Result<Vec<bool>> {
    problem.check_dim(q_tilde)?;
    problem.check_dim(q)?;
    let bound = params.m_bound / (2.0 * params.alpha) * linalg::distance(q, q_tilde).powi(2) + FEAS_TOL;
    problem
        .constraints()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let hs = HalfSpace::tangent(i, c.value(t, q_tilde), c.gradient(t, q_tilde)?, q_tilde)?;
            Ok(distance_single(q, &hs) <= bound)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SampleCount {
    pub violations: usize,
    pub samples: usize,
}

impl std::ops::Add for SampleCount {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            violations: self.violations + rhs.violations,
            samples: self.samples + rhs.samples,
        }
    }
}

/// Uniform point in the ball `B(center, radius)`.
fn ball_sample(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = linalg::norm(&dir);
    let scale = radius * rng.random::<f64>().powf(1.0 / d as f64) / if n > 0.0 { n } else { 1.0 };
    center.iter().zip(&dir).map(|(c, v)| c + scale * v).collect()
}

/// Samples `q` uniformly in `B(q̃, r/4)` and counts violations of
/// `d_{Qc(t, q̃)}(q) <= Θ Σ_i d_{Qc_i(t, q̃)}(q) + FEAS_TOL`, with `Θ` and `r`
/// from `params`.
///
/// When `d_{Qc(t, q̃)}(q̃) > r/4` the hypothesis fails and no sample is
/// drawn (`samples = 0`).
pub fn check_metric_qualification(
    problem: &SweepingProblem,
    params: &AssumptionParams,
    t: f64,
    q_tilde: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<SampleCount> {
    problem.check_dim(q_tilde)?;
    let DerivedConstants { theta, r_qual, .. } = derived_constants(params);
    let poly = linearize(problem, t, q_tilde)?;
    if distance(q_tilde, &poly)? > r_qual / 4.0 {
        log::warn!("qualification hypothesis fails at t = {t}; skipping samples");
        return Ok(SampleCount::default());
    }
    (0..sample_count)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s as u64);
            let q = ball_sample(&mut rng, q_tilde, r_qual / 4.0);
            let lhs = distance(&q, &poly)?;
            let rhs: f64 = poly.halfspaces().iter().map(|hs| distance_single(&q, hs)).sum();
            Ok(SampleCount {
                violations: usize::from(lhs > theta * rhs + FEAS_TOL),
                samples: 1,
            })
        })
        .try_reduce(SampleCount::default, |a, b| Ok(a + b))
}

/// Per-step `d_{Qc(t_{k+1}, q_k)}(q_k) / h` from the stored step records,
/// and its maximum.
pub fn estimate_step_distance(traj: &DiscreteTrajectory) -> (f64, Vec<f64>) {
    let h = traj.step_size();
    let ratios: Vec<f64> = traj.records().iter().map(|r| r.set_motion_distance / h).collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    (max, ratios)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsOptions {
    /// Samples for each of the two sampled inequalities.
    pub samples: usize,
    pub gamma_trials: usize,
    pub seed: u64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            gamma_trials: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub eta: f64,
    pub theta: f64,
    pub r_qual: f64,
    pub gamma_estimate: f64,
    /// `γ` used by the sampled checks: the larger of the supplied value and
    /// the estimate.
    pub gamma_used: f64,
    pub gradient_norm_min: f64,
    pub gradient_norm_max: f64,
    pub quadratic_bound_violations: usize,
    pub quadratic_samples: usize,
    pub qualification_violations: usize,
    pub qualification_samples: usize,
    pub samples_used: usize,
    pub max_step_distance_ratio: Option<f64>,
    pub degenerate_gradients: bool,
    pub degenerate_detail: Option<String>,
    pub seed: u64,
}

/// A feasible configuration at which the checks are centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub t: f64,
    pub q: Configuration,
}

/// Runs every check around `anchors` and summarizes the results.
///
/// Quadratic-bound samples pair an anchor `q` with a tangent point `q̃`
/// drawn uniformly in `B(q, r_qual)`; qualification samples are drawn in
/// `B(q̃, r_qual / 4)` around the anchor itself. Samples are spread over the
/// anchors round-robin. A positive-linear dependence found while estimating
/// γ is recorded in the report rather than returned as an error.
pub fn run_diagnostics(
    problem: &SweepingProblem,
    params: &AssumptionParams,
    anchors: &[Anchor],
    trajectory: Option<&DiscreteTrajectory>,
    opts: &DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    params.validate()?;
    if anchors.is_empty() {
        return Err(Error::InvalidProblem("diagnostics need at least one anchor".into()));
    }
    for a in anchors {
        if !is_feasible(problem, a.t, &a.q, FEAS_TOL)? {
            return Err(Error::InvalidProblem(format!(
                "diagnostic anchor at t = {} is infeasible",
                a.t
            )));
        }
    }
    let constants = derived_constants(params);

    let mut gamma_estimate = 1.0f64;
    let mut degenerate_detail = None;
    let mut degenerate_anchor = vec![false; anchors.len()];
    for (k, a) in anchors.iter().enumerate() {
        match estimate_gamma(problem, a.t, &a.q, params.rho, opts.gamma_trials, opts.seed.wrapping_add(k as u64)) {
            Ok(g) => gamma_estimate = gamma_estimate.max(g),
            Err(e @ Error::DegenerateGradients { .. }) => {
                degenerate_anchor[k] = true;
                degenerate_detail.get_or_insert_with(|| format!("t = {}: {e}", a.t));
            }
            Err(e) => return Err(e),
        }
    }
    let gamma_used = params.gamma.max(gamma_estimate);
    let checked = AssumptionParams {
        gamma: gamma_used,
        ..*params
    };
    let check_constants = derived_constants(&checked);

    let (mut gmin, mut gmax) = (f64::INFINITY, 0.0f64);
    for a in anchors {
        for c in problem.constraints() {
            let n = c.gradient(a.t, &a.q).map(|g| g.norm()).unwrap_or(0.0);
            gmin = gmin.min(n);
            gmax = gmax.max(n);
        }
    }
    if problem.constraint_count() == 0 {
        gmin = 0.0;
    }

    let quad = (0..opts.samples)
        .into_par_iter()
        .map(|s| {
            let a = &anchors[s % anchors.len()];
            let mut rng = sample_rng(opts.seed, s as u64);
            let q_tilde = ball_sample(&mut rng, &a.q, check_constants.r_qual);
            let ok = check_quadratic_distance(problem, &checked, a.t, &q_tilde, &a.q)?;
            Ok(SampleCount {
                violations: usize::from(ok.iter().any(|b| !b)),
                samples: 1,
            })
        })
        .try_reduce(SampleCount::default, |a, b| Ok(a + b))?;

    let mut qual = SampleCount::default();
    let live: Vec<usize> = (0..anchors.len()).filter(|&k| !degenerate_anchor[k]).collect();
    for (slot, &k) in live.iter().enumerate() {
        let share = opts.samples / live.len() + usize::from(slot < opts.samples % live.len());
        let a = &anchors[k];
        let seed = opts.seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1);
        qual = qual + check_metric_qualification(problem, &checked, a.t, &a.q, share, seed)?;
    }

    Ok(DiagnosticsReport {
        eta: constants.eta,
        theta: constants.theta,
        r_qual: constants.r_qual,
        gamma_estimate,
        gamma_used,
        gradient_norm_min: gmin,
        gradient_norm_max: gmax,
        quadratic_bound_violations: quad.violations,
        quadratic_samples: quad.samples,
        qualification_violations: qual.violations,
        qualification_samples: qual.samples,
        samples_used: quad.samples + qual.samples,
        max_step_distance_ratio: trajectory.map(|tr| estimate_step_distance(tr).0),
        degenerate_gradients: degenerate_detail.is_some(),
        degenerate_detail,
        seed: opts.seed,
    })
}
