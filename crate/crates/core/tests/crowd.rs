use sweep_core::builtin::builtin;
use sweep_core::crowd::{self, CrowdScenario};
use sweep_core::stepper::{solve_with, Pruning, StepOptions};
use sweep_core::{evaluate_all, gradient_check, solve, FEAS_TOL, PROJ_TOL};

#[test]
fn disks_never_overlap() {
    let scenario = CrowdScenario::square_room(20, 3);
    let problem = crowd::build(&scenario, 4.0).unwrap();
    let traj = solve(&problem, 200).unwrap();
    let pairs = scenario.pair_count();
    let mut worst = f64::INFINITY;
    for (t, q) in traj.times().iter().zip(traj.nodes()) {
        let g = evaluate_all(&problem, *t, q).unwrap();
        worst = worst.min(g[..pairs].iter().copied().fold(f64::INFINITY, f64::min));
        assert!(g.iter().all(|&v| v >= -FEAS_TOL));
    }
    assert!(worst >= -FEAS_TOL);
    // The crowd does reach the door and touch.
    assert!(worst < 1e-6, "no contact happened (closest gap {worst})");
}

#[test]
fn pair_gradients_have_norm_sqrt2() {
    let scenario = CrowdScenario::square_room(6, 11);
    let problem = crowd::build(&scenario, 1.0).unwrap();
    let q = problem.initial();
    for c in &problem.constraints()[..scenario.pair_count()] {
        let g = c.gradient(0.0, q).unwrap();
        assert!((g.norm() - std::f64::consts::SQRT_2).abs() < 1e-14);
        assert!(gradient_check(c.as_ref(), 0.0, q, 1e-6) <= 1e-6);
    }
}

#[test]
fn head_on_disks_stop_at_contact() {
    let problem = builtin("two-disk-headon", None).unwrap();
    let traj = solve(&problem, 200).unwrap();
    let nodes = traj.nodes();
    let contact = (0..nodes.len())
        .find(|&k| evaluate_all(&problem, traj.times()[k], &nodes[k]).unwrap()[0] <= 1e-9)
        .expect("disks make contact");
    assert!(contact + 100 < nodes.len());
    for k in contact..contact + 100 {
        let moved = sweep_core::linalg::distance(&nodes[k], &nodes[k + 1]);
        assert!(moved <= 1e-8, "step {k} moved {moved:e}");
    }
}

fn mirror(q: &[f64], height: f64, partner: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    for (i, &j) in partner.iter().enumerate() {
        out[2 * j] = q[2 * i];
        out[2 * j + 1] = height - q[2 * i + 1];
    }
    out
}

#[test]
fn symmetric_start_stays_symmetric() {
    let mut scenario = CrowdScenario::square_room(6, 0);
    // A door wide enough that two disks abreast do not wedge between the
    // jambs, which would make the contact normals positively dependent.
    scenario.jamb_spacing = 3.4;
    scenario.initial_positions = Some(vec![
        [7.0, 4.2],
        [7.0, 5.8],
        [5.5, 3.9],
        [5.5, 6.1],
        [8.4, 4.6],
        [8.4, 5.4],
    ]);
    let partner = [1, 0, 3, 2, 5, 4];
    let problem = crowd::build(&scenario, 3.0).unwrap();
    let traj = solve(&problem, 150).unwrap();
    let mut previous = 0.0;
    for (k, q) in traj.nodes().iter().enumerate() {
        let m = mirror(q, scenario.room.height, &partner);
        let gap = sweep_core::linalg::distance(q, &m);
        assert!(gap - previous <= 100.0 * PROJ_TOL, "node {k}: asymmetry grew to {gap:e}");
        previous = gap;
    }
    let moved = sweep_core::linalg::distance(traj.nodes().first().unwrap(), traj.nodes().last().unwrap());
    assert!(moved > 1.0);
}

#[test]
fn pruning_matches_full_polyhedron() {
    let scenario = CrowdScenario::square_room(20, 5);
    let problem = crowd::build(&scenario, 4.0).unwrap();
    let full = solve(&problem, 100).unwrap();
    let opts = StepOptions {
        pruning: Some(Pruning {
            per_unit_step: 2.0 * scenario.desired_speed,
            safety: 0.1,
        }),
        ..StepOptions::default()
    };
    let pruned = solve_with(&problem, 100, &opts).unwrap();
    for (a, b) in full.nodes().iter().zip(pruned.nodes()) {
        assert!(sweep_core::linalg::distance(a, b) <= 1e-7);
    }
    let fewer = pruned.records().iter().map(|r| r.halfspaces).sum::<usize>();
    let all = full.records().iter().map(|r| r.halfspaces).sum::<usize>();
    assert!(fewer < all);
}

#[test]
fn solves_are_reproducible() {
    let scenario = CrowdScenario::square_room(12, 9);
    let problem = crowd::build(&scenario, 2.0).unwrap();
    let a = solve(&problem, 80).unwrap();
    let b = solve(&crowd::build(&scenario, 2.0).unwrap(), 80).unwrap();
    assert_eq!(a, b);
}
