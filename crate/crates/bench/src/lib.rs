//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweep_core::crowd::{self, CrowdScenario};
use sweep_core::linalg::dot;
use sweep_core::{linearize, HalfSpace, Polyhedron, SparseVector, SweepingProblem};

/// A nonempty random polyhedron in dimension `d` with `p` half-spaces and a
/// point to project, reproducible from `seed`.
pub fn random_instance(d: usize, p: usize, seed: u64) -> (Vec<f64>, Polyhedron) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let hs = (0..p)
        .map(|_| {
            let n: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let margin = rng.random_range(0.0..1.5);
            HalfSpace::new(SparseVector::from_dense(&n), dot(&n, &center) - margin).unwrap()
        })
        .collect();
    let y = (0..d).map(|_| rng.random_range(-8.0..8.0)).collect();
    (y, Polyhedron::new(d, hs).unwrap())
}

/// A crowd of `count` disks in the default room over `horizon`.
pub fn crowd_problem(count: usize, horizon: f64) -> SweepingProblem {
    crowd::build(&CrowdScenario::square_room(count, 0), horizon).unwrap()
}

/// The first step polyhedron of a crowd run and its Euler prediction with
/// step `h`.
pub fn crowd_step_instance(problem: &SweepingProblem, h: f64) -> (Vec<f64>, Polyhedron) {
    let q = problem.initial().as_slice();
    let poly = linearize(problem, h, q).unwrap();
    let f = problem.perturbation(0.0, q);
    let y = q.iter().zip(&f).map(|(a, b)| a + h * b).collect();
    (y, poly)
}
