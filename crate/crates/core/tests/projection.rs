use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweep_core::linalg::{distance, dot};
use sweep_core::{project, project_oracle, HalfSpace, Polyhedron, SparseVector, PROJ_TOL};

/// A polyhedron containing the box around `center` of half-width `margin`
/// in every normal direction, so it is never empty.
fn nonempty_polyhedron(center: &[f64], normals: &[Vec<f64>], margins: &[f64]) -> Polyhedron {
    let hs = normals
        .iter()
        .zip(margins)
        .filter(|(n, _)| n.iter().map(|v| v * v).sum::<f64>() > 1e-6)
        .map(|(n, m)| HalfSpace::new(SparseVector::from_dense(n), dot(n, center) - m).unwrap())
        .collect();
    Polyhedron::new(center.len(), hs).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Polyhedron) {
    let d = rng.random_range(1..=6);
    let p = rng.random_range(1..=8);
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let normals: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let margins: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..1.5)).collect();
    let y = (0..d).map(|_| rng.random_range(-8.0..8.0)).collect();
    (y, nonempty_polyhedron(&center, &normals, &margins))
}

#[test]
fn agrees_with_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1500 {
        let (y, poly) = random_instance(&mut rng);
        let fast = project(&y, &poly).unwrap();
        let exact = project_oracle(&y, &poly).unwrap();
        worst = worst.max(distance(&fast.point, &exact));
    }
    assert!(worst <= 1e-8, "largest deviation {worst:e}");
}

#[test]
fn results_satisfy_kkt_conditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let (y, poly) = random_instance(&mut rng);
        let r = project(&y, &poly).unwrap();
        assert!(poly.max_violation(&r.point) <= PROJ_TOL);
        let mut x = y.clone();
        for (h, &l) in poly.halfspaces().iter().zip(&r.multipliers) {
            assert!(l >= 0.0);
            assert!((l * h.slack(&r.point)).abs() <= 1e-9);
            h.normal().axpy_into(l, &mut x);
        }
        assert!(distance(&x, &r.point) <= 1e-9);
    }
}

fn instance_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Polyhedron)> {
    (1usize..=5, 1usize..=7).prop_flat_map(|(d, p)| {
        (
            prop::collection::vec(-3.0f64..3.0, d),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), p),
            prop::collection::vec(0.0f64..1.0, p),
            prop::collection::vec(-6.0f64..6.0, d),
            prop::collection::vec(-6.0f64..6.0, d),
        )
            .prop_map(|(c, ns, ms, y1, y2)| (y1, y2, nonempty_polyhedron(&c, &ns, &ms)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_idempotent((y, _y2, poly) in instance_strategy()) {
        let once = project(&y, &poly).unwrap().point;
        let twice = project(&once, &poly).unwrap().point;
        prop_assert!(distance(&once, &twice) <= 2.0 * PROJ_TOL);
    }

    #[test]
    fn projection_is_nonexpansive((y1, y2, poly) in instance_strategy()) {
        let a = project(&y1, &poly).unwrap().point;
        let b = project(&y2, &poly).unwrap().point;
        prop_assert!(distance(&a, &b) <= distance(&y1, &y2) + 4.0 * PROJ_TOL);
    }

    #[test]
    fn variational_inequality_holds((y, _y2, poly) in instance_strategy(), seed in any::<u64>()) {
        let px = project(&y, &poly).unwrap().point;
        let residual: Vec<f64> = y.iter().zip(px.iter()).map(|(a, b)| a - b).collect();
        let r_norm = dot(&residual, &residual).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            // Draws outside the set are pulled back in by projecting them.
            let raw: Vec<f64> = px.iter().map(|v| v + rng.random_range(-4.0..4.0)).collect();
            let z = project(&raw, &poly).unwrap().point;
            let diff: Vec<f64> = z.iter().zip(px.iter()).map(|(a, b)| a - b).collect();
            prop_assert!(dot(&residual, &diff) <= PROJ_TOL * r_norm);
        }
    }
}
