//! Linearized inner approximation of the feasible set and Euclidean
//! projection onto it.
//!
//! At a configuration `q` every constraint is replaced by its tangent
//! half-space
//!
//! ```text
//!   g_i(t, q) + <∇g_i(t, q), x - q> >= 0
//! ```
//!
//! and the intersection is a polyhedron contained in `Q(t)` (convexity of
//! `g_i`). Projection onto it solves
//!
//! ```text
//!   min 1/2 |x - y|^2   s.t.   <n_i, x> >= b_i
//! ```
//!
//! through its dual: with `G = N N^T` and `s = b - N y`, the multipliers
//! minimize `1/2 λ^T G λ - s^T λ` over `λ >= 0` and `x = y + N^T λ`.
//! The dual is driven by projected gradient steps (Uzawa iteration) and, once
//! the support of `λ` settles, finished by an exact solve restricted to that
//! support.

use nalgebra::{DMatrix, DVector};

use crate::active_set;
use crate::error::{Error, Result};
use crate::linalg::{self, SparseVector};
use crate::model::{Configuration, SweepingProblem};
use crate::{GRAD_FLOOR, PROJ_TOL};

/// `{ x : <normal, x> >= offset }` with a nonzero normal.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    normal: SparseVector,
    offset: f64,
    norm: f64,
}

impl HalfSpace {
    /// Fails with [`Error::ZeroGradient`] when `|normal| < GRAD_FLOOR`.
    pub fn new(normal: SparseVector, offset: f64) -> Result<Self> {
        Self::indexed(0, normal, offset)
    }

    fn indexed(index: usize, normal: SparseVector, offset: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm >= GRAD_FLOOR) {
            return Err(Error::ZeroGradient(index));
        }
        Ok(Self { normal, offset, norm })
    }

    /// Linearization of a constraint with value `value` and gradient `grad`
    /// taken at `q`.
    pub fn tangent(index: usize, value: f64, grad: SparseVector, q: &[f64]) -> Result<Self> {
        let offset = grad.dot(q) - value;
        Self::indexed(index, grad, offset)
    }

    pub fn normal(&self) -> &SparseVector {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn normal_norm(&self) -> f64 {
        self.norm
    }

    /// `<normal, y> - offset`; nonnegative inside.
    pub fn slack(&self, y: &[f64]) -> f64 {
        self.normal.dot(y) - self.offset
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        self.slack(y) >= -tol
    }
}

/// Intersection of half-spaces in `R^d`.
///
/// `sources[k]` records which constraint of the originating problem produced
/// half-space `k`; it is the identity unless the polyhedron was pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    halfspaces: Vec<HalfSpace>,
    dimension: usize,
    sources: Vec<usize>,
}

impl Polyhedron {
    pub fn new(dimension: usize, halfspaces: Vec<HalfSpace>) -> Result<Self> {
        let sources = (0..halfspaces.len()).collect();
        Self::with_sources(dimension, halfspaces, sources)
    }

    pub fn with_sources(dimension: usize, halfspaces: Vec<HalfSpace>, sources: Vec<usize>) -> Result<Self> {
        if let Some(h) = halfspaces.iter().find(|h| h.normal.min_dimension() > dimension) {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                found: h.normal.min_dimension(),
            });
        }
        assert_eq!(halfspaces.len(), sources.len());
        Ok(Self {
            halfspaces,
            dimension,
            sources,
        })
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.halfspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halfspaces.is_empty()
    }

    /// Largest violation `offset_i - <n_i, y>` (0 when `y` is inside).
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| -h.slack(y))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.contains(y, tol))
    }
}

/// Builds the tangent polyhedron of every constraint at `(t, q)`.
pub fn linearize(problem: &SweepingProblem, t: f64, q: &[f64]) -> Result<Polyhedron> {
    linearize_filtered(problem, t, q, |_| true)
}

/// Like [`linearize`] but keeps only the constraints whose value passes
/// `keep`.
pub fn linearize_filtered<F>(problem: &SweepingProblem, t: f64, q: &[f64], keep: F) -> Result<Polyhedron>
where
    F: Fn(f64) -> bool,
{
    problem.check_dim(q)?;
    let mut halfspaces = Vec::with_capacity(problem.constraint_count());
    let mut sources = Vec::with_capacity(problem.constraint_count());
    for (index, c) in problem.constraints().iter().enumerate() {
        let value = c.value(t, q);
        if !value.is_finite() {
            return Err(Error::Evaluation { index, t, value });
        }
        if !keep(value) {
            continue;
        }
        let grad = c.gradient(t, q)?;
        halfspaces.push(HalfSpace::tangent(index, value, grad, q)?);
        sources.push(index);
    }
    Polyhedron::with_sources(problem.dim(), halfspaces, sources)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: Configuration,
    /// One multiplier per half-space: `point = y + Σ λ_i n_i`.
    pub multipliers: Vec<f64>,
    /// Max of primal violation and complementarity `|λ_i slack_i|`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub power_iterations: usize,
    /// Dual iterations between residual checks.
    pub check_interval: usize,
    /// Finish with an exact solve on the multiplier support, and switch to
    /// the exact active-set method after `exact_after` dual iterations.
    pub polish: bool,
    pub exact_after: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tolerance: PROJ_TOL,
            max_iterations: 100_000,
            power_iterations: 50,
            check_interval: 25,
            polish: true,
            exact_after: 1000,
        }
    }
}

pub fn project(y: &[f64], poly: &Polyhedron) -> Result<ProjectionResult> {
    project_with(y, poly, &ProjectionOptions::default(), None)
}

/// Projects `y` onto `poly`. `warm` seeds the multipliers (typically the
/// previous time step's); entries beyond `poly.len()` are ignored and
/// missing ones start at zero.
pub fn project_with(
    y: &[f64],
    poly: &Polyhedron,
    opts: &ProjectionOptions,
    warm: Option<&[f64]>,
) -> Result<ProjectionResult> {
    if y.len() != poly.dimension {
        return Err(Error::DimensionMismatch {
            expected: poly.dimension,
            found: y.len(),
        });
    }
    let dual = Dual::new(y, poly, opts);
    let p = poly.len();
    let initial_violation = dual.s.iter().copied().fold(0.0, f64::max);
    if p == 0 || initial_violation <= opts.tolerance {
        return Ok(ProjectionResult {
            point: Configuration::from_raw(y.to_vec()),
            multipliers: vec![0.0; p],
            residual: initial_violation,
            iterations: 0,
        });
    }

    let mut lambda = vec![0.0; p];
    if let Some(w) = warm {
        for (l, &v) in lambda.iter_mut().zip(w) {
            *l = if v.is_finite() { v.max(0.0) } else { 0.0 };
        }
    }

    let mut z = dual.apply_nt(&lambda);
    let mut g = dual.gradient(&z);
    let mut support = dual.support(&lambda, &g);
    if opts.polish {
        if let Some(done) = dual.polish(&support, 0) {
            return Ok(done);
        }
    }
    let mut last_polished = support.clone();

    let mut step = 1.0 / (1.01 * dual.gram_spectral_estimate(opts.power_iterations));
    let mut objective = dual.objective(&lambda, &z);
    let mut best = (dual.residual(&lambda, &g), lambda.clone());
    let mut iterations = 0;
    let interval = opts.check_interval.max(1);
    let mut tried_exact = false;

    while iterations < opts.max_iterations {
        if opts.polish && !tried_exact && iterations >= opts.exact_after {
            tried_exact = true;
            let mut prefer: Vec<usize> = (0..p).filter(|&i| lambda[i] > 0.0).collect();
            prefer.sort_by(|&a, &b| lambda[b].total_cmp(&lambda[a]));
            let exact = active_set::project_exact(y, poly, &prefer, opts.tolerance)?;
            let ez: Vec<f64> = exact.point.iter().zip(y).map(|(a, b)| a - b).collect();
            let eg = dual.gradient(&ez);
            let residual = dual.residual(&exact.multipliers, &eg);
            if residual <= opts.tolerance {
                return Ok(dual.finish(exact.multipliers, ez, residual, iterations));
            }
            log::debug!("exact projection left residual {residual:e}; resuming dual iterations from it");
            lambda = exact.multipliers;
            z = dual.apply_nt(&lambda);
            g = dual.gradient(&z);
            objective = dual.objective(&lambda, &z);
        }
        let burst = interval.min(opts.max_iterations - iterations);
        let before = lambda.clone();
        for _ in 0..burst {
            for (l, gi) in lambda.iter_mut().zip(&g) {
                *l = (*l - step * gi).max(0.0);
            }
            z = dual.apply_nt(&lambda);
            g = dual.gradient(&z);
        }
        iterations += burst;

        // Projected gradient with step <= 1/L never increases the dual
        // objective; an increase means the spectral estimate was too low.
        let next_objective = dual.objective(&lambda, &z);
        if next_objective > objective + 1e-12 * (1.0 + objective.abs()) {
            step *= 0.5;
            lambda = before;
            z = dual.apply_nt(&lambda);
            g = dual.gradient(&z);
            continue;
        }
        objective = next_objective;

        let residual = dual.residual(&lambda, &g);
        if residual < best.0 {
            best = (residual, lambda.clone());
        }
        if residual <= opts.tolerance {
            // The support is now known; an exact solve on it removes the
            // remaining dual error.
            if opts.polish {
                if let Some(done) = dual.polish(&dual.support(&lambda, &g), iterations) {
                    return Ok(done);
                }
            }
            return Ok(dual.finish(lambda, z, residual, iterations));
        }

        support = dual.support(&lambda, &g);
        if opts.polish && support != last_polished {
            if let Some(done) = dual.polish(&support, iterations) {
                return Ok(done);
            }
            last_polished = support.clone();
        }

        let increment: Vec<f64> = lambda.iter().zip(&before).map(|(a, b)| a - b).collect();
        dual.check_divergence(&lambda, &increment)?;
    }

    let (residual, lambda) = best;
    let z = dual.apply_nt(&lambda);
    let best = dual.finish(lambda, z, residual, iterations);
    Err(Error::MaxIterations {
        iterations,
        residual,
        best: Box::new(best),
    })
}

/// `|y - P(y)|`.
pub fn distance(y: &[f64], poly: &Polyhedron) -> Result<f64> {
    Ok(linalg::distance(y, &project(y, poly)?.point))
}

/// Distance from `y` to a single half-space.
pub fn distance_single(y: &[f64], hs: &HalfSpace) -> f64 {
    (-hs.slack(y)).max(0.0) / hs.norm
}

struct Dual<'a> {
    y: &'a [f64],
    poly: &'a Polyhedron,
    /// `b - N y`: positive entries are violated at `y`.
    s: Vec<f64>,
    tol: f64,
}

impl<'a> Dual<'a> {
    fn new(y: &'a [f64], poly: &'a Polyhedron, opts: &ProjectionOptions) -> Self {
        let s = poly.halfspaces.iter().map(|h| -h.slack(y)).collect();
        Self {
            y,
            poly,
            s,
            tol: opts.tolerance,
        }
    }

    /// `N^T λ`
    fn apply_nt(&self, lambda: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.poly.dimension];
        for (h, &l) in self.poly.halfspaces.iter().zip(lambda) {
            if l != 0.0 {
                h.normal.axpy_into(l, &mut z);
            }
        }
        z
    }

    /// Dual gradient `G λ - s`, evaluated from `z = N^T λ`. Entry `i` is the
    /// slack of half-space `i` at `x = y + z`.
    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        self.poly
            .halfspaces
            .iter()
            .zip(&self.s)
            .map(|(h, s)| h.normal.dot(z) - s)
            .collect()
    }

    fn objective(&self, lambda: &[f64], z: &[f64]) -> f64 {
        0.5 * linalg::dot(z, z) - linalg::dot(&self.s, lambda)
    }

    fn residual(&self, lambda: &[f64], g: &[f64]) -> f64 {
        lambda
            .iter()
            .zip(g)
            .map(|(l, gi)| (-gi).max((l * gi).abs()))
            .fold(0.0, f64::max)
    }

    /// Positive multipliers plus violated half-spaces.
    fn support(&self, lambda: &[f64], g: &[f64]) -> Vec<usize> {
        (0..lambda.len())
            .filter(|&i| lambda[i] > 0.0 || g[i] < -self.tol)
            .collect()
    }

    fn gram_spectral_estimate(&self, iterations: usize) -> f64 {
        let p = self.poly.len();
        let mut v = vec![1.0 / (p as f64).sqrt(); p];
        let mut estimate: f64 = 0.0;
        for _ in 0..iterations.max(1) {
            let z = self.apply_nt(&v);
            let gv: Vec<f64> = self.poly.halfspaces.iter().map(|h| h.normal.dot(&z)).collect();
            let n = linalg::norm(&gv);
            if n == 0.0 {
                break;
            }
            estimate = n;
            v = gv.into_iter().map(|x| x / n).collect();
        }
        // Gram diagonal entries bound λ_max from below.
        let diag = self
            .poly
            .halfspaces
            .iter()
            .map(|h| h.normal.norm_squared())
            .fold(0.0, f64::max);
        estimate.max(diag)
    }

    /// Fails with [`Error::Infeasible`] when the multipliers blow up or when
    /// the last burst's increment is a Farkas direction: `d >= 0` with
    /// `s^T d > |N^T d| R` certifies that no feasible point lies within `R`
    /// of `y`.
    fn check_divergence(&self, lambda: &[f64], increment: &[f64]) -> Result<()> {
        let lam_norm = linalg::norm(lambda);
        let min_normal = self
            .poly
            .halfspaces
            .iter()
            .map(|h| h.norm)
            .fold(f64::INFINITY, f64::min);
        let max_normal = self.poly.halfspaces.iter().map(|h| h.norm).fold(0.0, f64::max);
        let y_norm = linalg::norm(self.y);
        if lam_norm > 1e8 * (1.0 + y_norm) / min_normal {
            return Err(Error::Infeasible { multiplier_norm: lam_norm });
        }
        let d: Vec<f64> = increment.iter().map(|v| v.max(0.0)).collect();
        let d_norm = linalg::norm(&d);
        if d_norm == 0.0 {
            return Ok(());
        }
        let nt_d = linalg::norm(&self.apply_nt(&d)) + 1e-14 * d_norm * max_normal;
        let s_d = linalg::dot(&self.s, &d);
        let radius = 1e6 * (1.0 + y_norm);
        if s_d > nt_d * radius {
            return Err(Error::Infeasible { multiplier_norm: lam_norm });
        }
        Ok(())
    }

    fn finish(&self, lambda: Vec<f64>, z: Vec<f64>, residual: f64, iterations: usize) -> ProjectionResult {
        let point: Vec<f64> = self.y.iter().zip(&z).map(|(a, b)| a + b).collect();
        ProjectionResult {
            point: Configuration::from_raw(point),
            multipliers: lambda,
            residual,
            iterations,
        }
    }

    /// Exact solve of the equality-constrained projection on a working set,
    /// with add/drop corrections. Returns `None` when no KKT point is reached
    /// within a bounded number of rounds.
    fn polish(&self, seed: &[usize], iterations: usize) -> Option<ProjectionResult> {
        let p = self.poly.len();
        let mut active: Vec<usize> = seed.to_vec();
        let max_rounds = 20 + 2 * seed.len().min(250);
        let mut lambda = vec![0.0; p];
        for round in 0..max_rounds {
            let mu = if active.is_empty() {
                Vec::new()
            } else {
                self.solve_working_set(&active)?
            };
            let mu_scale = mu.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            let negative = mu
                .iter()
                .enumerate()
                .filter(|(_, &m)| m < -1e-12 * mu_scale)
                .min_by(|a, b| a.1.total_cmp(b.1));
            if let Some((pos, _)) = negative {
                active.remove(pos);
                continue;
            }

            lambda.iter_mut().for_each(|l| *l = 0.0);
            for (&i, &m) in active.iter().zip(&mu) {
                lambda[i] = m.max(0.0);
            }
            let z = self.apply_nt(&lambda);
            let g = self.gradient(&z);

            let mut violated: Vec<(usize, f64)> = (0..p)
                .filter(|&i| g[i] < -self.tol && active.binary_search(&i).is_err())
                .map(|i| (i, g[i]))
                .collect();
            if !violated.is_empty() {
                if round >= 5 {
                    violated.sort_by(|a, b| a.1.total_cmp(&b.1));
                    violated.truncate(1);
                }
                active.extend(violated.into_iter().map(|(i, _)| i));
                active.sort_unstable();
                continue;
            }

            let residual = self.residual(&lambda, &g);
            return (residual <= self.tol).then(|| self.finish(lambda, z, residual, iterations));
        }
        None
    }

    /// Multipliers `μ` with `G_AA μ = s_A`: Cholesky first, SVD
    /// pseudo-inverse for rank-deficient working sets.
    fn solve_working_set(&self, active: &[usize]) -> Option<Vec<f64>> {
        let k = active.len();
        let hs = &self.poly.halfspaces;
        let mut gram = DMatrix::<f64>::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = hs[active[a]].normal.dot_sparse(&hs[active[b]].normal);
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        let rhs = DVector::from_iterator(k, active.iter().map(|&i| self.s[i]));
        let rhs_scale = 1.0 + rhs.amax();

        if let Some(chol) = gram.clone().cholesky() {
            let mu = chol.solve(&rhs);
            let err = (&gram * &mu - &rhs).amax();
            if mu.iter().all(|v| v.is_finite()) && err <= 1e-11 * rhs_scale {
                return Some(mu.iter().copied().collect());
            }
        }
        let svd = gram.svd(true, true);
        let eps = 1e-12 * svd.singular_values.max();
        let mu = svd.solve(&rhs, eps).ok()?;
        mu.iter().all(|v| v.is_finite()).then(|| mu.iter().copied().collect())
    }
}

/// Largest polyhedron accepted by [`project_oracle`].
pub const ORACLE_MAX_HALFSPACES: usize = 20;

/// Brute-force projection: for every subset of half-spaces taken as
/// equalities, computes the minimum-norm correction with an SVD of the
/// constraint rows, and keeps the closest candidate that is primal feasible
/// with nonnegative multipliers.
pub fn project_oracle(y: &[f64], poly: &Polyhedron) -> Result<Configuration> {
    let p = poly.len();
    if p > ORACLE_MAX_HALFSPACES {
        return Err(Error::TooManyHalfSpaces {
            max: ORACLE_MAX_HALFSPACES,
            found: p,
        });
    }
    let d = poly.dimension;
    if y.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: y.len() });
    }
    let dense: Vec<Vec<f64>> = poly.halfspaces.iter().map(|h| h.normal.to_dense(d)).collect();
    let scale = 1.0
        + y.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        + poly.halfspaces.iter().fold(0.0_f64, |m, h| m.max(h.offset.abs()));
    let tol = 1e-9 * scale;

    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1u32 << p) {
        let rows: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        let candidate = if rows.is_empty() {
            Some(y.to_vec())
        } else {
            oracle_candidate(y, poly, &dense, &rows, tol)
        };
        let Some(x) = candidate else { continue };
        if !poly.contains(&x, tol) {
            continue;
        }
        let dist = linalg::distance(&x, y);
        if best.as_ref().is_none_or(|(b, _)| dist < *b) {
            best = Some((dist, x));
        }
    }
    best.map(|(_, x)| Configuration::from_raw(x)).ok_or(Error::NoKktPoint)
}

fn oracle_candidate(y: &[f64], poly: &Polyhedron, dense: &[Vec<f64>], rows: &[usize], tol: f64) -> Option<Vec<f64>> {
    let d = poly.dimension;
    let k = rows.len();
    let a = DMatrix::from_fn(k, d, |r, c| dense[rows[r]][c]);
    let yv = DVector::from_column_slice(y);
    let rhs = DVector::from_iterator(k, rows.iter().map(|&i| poly.halfspaces[i].offset)) - &a * &yv;

    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1e-300);
    let correction = svd.solve(&rhs, eps).ok()?;
    if (&a * &correction - &rhs).amax() > tol {
        return None;
    }
    let at_svd = a.transpose().svd(true, true);
    let mu = at_svd.solve(&correction, eps).ok()?;
    if mu.iter().any(|&m| m < -tol) {
        return None;
    }
    if (a.transpose() * &mu - &correction).amax() > tol {
        return None;
    }
    Some((yv + correction).iter().copied().collect())
}
