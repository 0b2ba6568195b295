//! Evacuation of a rectangular room by rigid disks.
//!
//! The state is the `2N`-vector of disk centers `(x_0, y_0, x_1, y_1, ...)`.
//! Constraints come in three groups, in this order:
//!
//! 1. one non-overlap constraint per pair `i < j` (lexicographic),
//! 2. for each disk, one half-plane per wall other than the exit wall,
//! 3. for each disk, one constraint per door jamb.
//!
//! The exit wall carries no constraint; the door is delimited by two round
//! jambs centered on the wall line at `exit_center ± jamb_spacing / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseVector;
use crate::model::{AffineConstraint, AssumptionParams, Configuration, Constraint, SweepingProblem};
use crate::GRAD_FLOOR;

/// Rejected draws allowed before [`place_initial`] gives up.
pub const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub width: f64,
    pub height: f64,
}

/// One of the four sides of the room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::Left, Wall::Right, Wall::Bottom, Wall::Top];

    /// Unit normal pointing out of the room.
    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Wall::Left => [-1.0, 0.0],
            Wall::Right => [1.0, 0.0],
            Wall::Bottom => [0.0, -1.0],
            Wall::Top => [0.0, 1.0],
        }
    }

    fn tangent(self) -> [f64; 2] {
        match self {
            Wall::Left | Wall::Right => [0.0, 1.0],
            Wall::Bottom | Wall::Top => [1.0, 0.0],
        }
    }
}

fn default_jamb_radius() -> f64 {
    1.0
}

fn default_jamb_spacing() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdScenario {
    pub count: usize,
    pub radius: f64,
    pub room: Room,
    /// A point on the room boundary; the door is centered here.
    pub exit_center: [f64; 2],
    #[serde(default = "default_jamb_radius")]
    pub jamb_radius: f64,
    /// Distance between the two jamb centers.
    #[serde(default = "default_jamb_spacing")]
    pub jamb_spacing: f64,
    pub desired_speed: f64,
    #[serde(default)]
    pub seed: u64,
    /// Explicit starting centers; replaces random placement when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_positions: Option<Vec<[f64; 2]>>,
}

impl CrowdScenario {
    /// A 10 m square room with the door in the middle of the right wall.
    pub fn square_room(count: usize, seed: u64) -> Self {
        Self {
            count,
            radius: 0.2,
            room: Room {
                width: 10.0,
                height: 10.0,
            },
            exit_center: [10.0, 5.0],
            jamb_radius: default_jamb_radius(),
            jamb_spacing: default_jamb_spacing(),
            desired_speed: 1.0,
            seed,
            initial_positions: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        let Room { width, height } = self.room;
        if !(width.is_finite() && height.is_finite() && width > 2.0 * self.radius && height > 2.0 * self.radius) {
            return bad(format!(
                "room {width} x {height} cannot hold a disk of radius {}",
                self.radius
            ));
        }
        if !(self.jamb_radius.is_finite() && self.jamb_radius >= 0.0) {
            return bad(format!("jamb_radius must be nonnegative, got {}", self.jamb_radius));
        }
        if !(self.jamb_spacing.is_finite() && self.jamb_spacing >= 0.0) {
            return bad(format!("jamb_spacing must be nonnegative, got {}", self.jamb_spacing));
        }
        if !(self.desired_speed.is_finite() && self.desired_speed > 0.0) {
            return bad(format!("desired_speed must be positive, got {}", self.desired_speed));
        }
        self.exit_wall()?;
        if let Some(pos) = &self.initial_positions {
            if pos.len() != self.count {
                return bad(format!(
                    "initial_positions has {} entries, expected {}",
                    pos.len(),
                    self.count
                ));
            }
        }
        Ok(())
    }

    /// The wall containing `exit_center`.
    pub fn exit_wall(&self) -> Result<Wall> {
        let [x, y] = self.exit_center;
        let Room { width, height } = self.room;
        let tol = 1e-9 * width.max(height);
        let within = |v: f64, hi: f64| v >= -tol && v <= hi + tol;
        let wall = if x.abs() <= tol && within(y, height) {
            Wall::Left
        } else if (x - width).abs() <= tol && within(y, height) {
            Wall::Right
        } else if y.abs() <= tol && within(x, width) {
            Wall::Bottom
        } else if (y - height).abs() <= tol && within(x, width) {
            Wall::Top
        } else {
            return Err(Error::InvalidScenario(format!(
                "exit_center ({x}, {y}) is not on the room boundary"
            )));
        };
        Ok(wall)
    }

    pub fn jamb_centers(&self) -> Result<[[f64; 2]; 2]> {
        let tan = self.exit_wall()?.tangent();
        let half = 0.5 * self.jamb_spacing;
        let [cx, cy] = self.exit_center;
        Ok([
            [cx - half * tan[0], cy - half * tan[1]],
            [cx + half * tan[0], cy + half * tan[1]],
        ])
    }

    pub fn dim(&self) -> usize {
        2 * self.count
    }

    pub fn pair_count(&self) -> usize {
        self.count * (self.count.saturating_sub(1)) / 2
    }
}

/// `g(q) = |q_i - q_j| - 2r` for disks `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskPair {
    pub i: usize,
    pub j: usize,
    pub radius: f64,
}

impl DiskPair {
    fn offset(&self, q: &[f64]) -> [f64; 2] {
        [q[2 * self.i] - q[2 * self.j], q[2 * self.i + 1] - q[2 * self.j + 1]]
    }
}

impl Constraint for DiskPair {
    fn value(&self, _t: f64, q: &[f64]) -> f64 {
        let [dx, dy] = self.offset(q);
        dx.hypot(dy) - 2.0 * self.radius
    }

    fn gradient(&self, _t: f64, q: &[f64]) -> Result<SparseVector> {
        let [dx, dy] = self.offset(q);
        let s = dx.hypot(dy);
        if s < GRAD_FLOOR {
            return Err(Error::CoincidentCenters { i: self.i, j: self.j });
        }
        let (ex, ey) = (dx / s, dy / s);
        Ok(SparseVector::from_pairs(vec![
            (2 * self.i, ex),
            (2 * self.i + 1, ey),
            (2 * self.j, -ex),
            (2 * self.j + 1, -ey),
        ]))
    }

    fn time_derivative(&self, _t: f64, _q: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// `g(q) = |q_i - center| - clearance` for a fixed round obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointObstacle {
    pub disk: usize,
    pub center: [f64; 2],
    pub clearance: f64,
}

impl Constraint for PointObstacle {
    fn value(&self, _t: f64, q: &[f64]) -> f64 {
        let dx = q[2 * self.disk] - self.center[0];
        let dy = q[2 * self.disk + 1] - self.center[1];
        dx.hypot(dy) - self.clearance
    }

    /// Returns the zero vector at the obstacle center, which the
    /// linearization reports as a vanishing gradient.
    fn gradient(&self, _t: f64, q: &[f64]) -> Result<SparseVector> {
        let dx = q[2 * self.disk] - self.center[0];
        let dy = q[2 * self.disk + 1] - self.center[1];
        let s = dx.hypot(dy);
        if s < GRAD_FLOOR {
            return Ok(SparseVector::default());
        }
        Ok(SparseVector::from_pairs(vec![
            (2 * self.disk, dx / s),
            (2 * self.disk + 1, dy / s),
        ]))
    }

    fn time_derivative(&self, _t: f64, _q: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

pub fn disk_constraint(scenario: &CrowdScenario, i: usize, j: usize) -> Result<DiskPair> {
    if !(i < j && j < scenario.count) {
        return Err(Error::InvalidScenario(format!(
            "disk pair ({i}, {j}) needs i < j < {}",
            scenario.count
        )));
    }
    Ok(DiskPair {
        i,
        j,
        radius: scenario.radius,
    })
}

/// Wall half-planes followed by jamb obstacles, grouped per disk.
pub fn wall_constraints(scenario: &CrowdScenario) -> Result<Vec<Box<dyn Constraint>>> {
    scenario.validate()?;
    let exit = scenario.exit_wall()?;
    let r = scenario.radius;
    let Room { width, height } = scenario.room;
    let mut out: Vec<Box<dyn Constraint>> = Vec::new();
    for disk in 0..scenario.count {
        let (x, y) = (2 * disk, 2 * disk + 1);
        for wall in Wall::ALL.into_iter().filter(|&w| w != exit) {
            let c = match wall {
                Wall::Left => AffineConstraint::new(SparseVector::from_pairs(vec![(x, 1.0)]), r),
                Wall::Right => AffineConstraint::new(SparseVector::from_pairs(vec![(x, -1.0)]), r - width),
                Wall::Bottom => AffineConstraint::new(SparseVector::from_pairs(vec![(y, 1.0)]), r),
                Wall::Top => AffineConstraint::new(SparseVector::from_pairs(vec![(y, -1.0)]), r - height),
            };
            out.push(Box::new(c));
        }
    }
    let jambs = scenario.jamb_centers()?;
    for disk in 0..scenario.count {
        for center in jambs {
            out.push(Box::new(PointObstacle {
                disk,
                center,
                clearance: r + scenario.jamb_radius,
            }));
        }
    }
    Ok(out)
}

/// Straight-line exit seeking at `desired_speed`; disks past the door line
/// keep moving along the outward normal of the exit wall.
pub fn spontaneous_velocity(scenario: &CrowdScenario, q: &[f64]) -> Result<Vec<f64>> {
    let outward = scenario.exit_wall()?.outward_normal();
    Ok(velocity_field(scenario, outward, q))
}

fn velocity_field(scenario: &CrowdScenario, outward: [f64; 2], q: &[f64]) -> Vec<f64> {
    let [ex, ey] = scenario.exit_center;
    let speed = scenario.desired_speed;
    let mut u = vec![0.0; q.len()];
    for (disk, out) in q.chunks_exact(2).zip(u.chunks_exact_mut(2)) {
        let (dx, dy) = (ex - disk[0], ey - disk[1]);
        let past = -(dx * outward[0] + dy * outward[1]) > 0.0;
        if past {
            out[0] = speed * outward[0];
            out[1] = speed * outward[1];
        } else {
            let dist = dx.hypot(dy);
            if dist >= GRAD_FLOOR {
                out[0] = speed * dx / dist;
                out[1] = speed * dy / dist;
            }
        }
    }
    u
}

/// Seeded rejection sampling of non-overlapping centers.
///
/// Centers are drawn uniformly in the room shrunk by `r + margin` and
/// rejected if they come within `2r + margin` of an accepted center or
/// within `r + jamb_radius + margin` of a jamb, with `margin = 0.01 r`.
pub fn place_initial(scenario: &CrowdScenario) -> Result<Configuration> {
    scenario.validate()?;
    let r = scenario.radius;
    let margin = 0.01 * r;
    let Room { width, height } = scenario.room;
    let lo = r + margin;
    let (hi_x, hi_y) = (width - lo, height - lo);
    if hi_x <= lo || hi_y <= lo {
        return Err(Error::PlacementFailure { placed: 0, rejected: 0 });
    }
    let jambs = scenario.jamb_centers()?;
    let pair_min = 2.0 * r + margin;
    let jamb_min = r + scenario.jamb_radius + margin;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(scenario.count);
    let mut rejected = 0usize;
    while centers.len() < scenario.count {
        let c = [rng.random_range(lo..hi_x), rng.random_range(lo..hi_y)];
        let clear = centers
            .iter()
            .all(|p| (p[0] - c[0]).hypot(p[1] - c[1]) >= pair_min)
            && jambs.iter().all(|p| (p[0] - c[0]).hypot(p[1] - c[1]) >= jamb_min);
        if clear {
            centers.push(c);
        } else {
            rejected += 1;
            if rejected >= MAX_REJECTIONS {
                return Err(Error::PlacementFailure {
                    placed: centers.len(),
                    rejected,
                });
            }
        }
    }
    Configuration::new(centers.into_iter().flatten().collect())
}

/// Assembles the problem on `[0, horizon]`, starting from
/// `initial_positions` when given and from [`place_initial`] otherwise.
pub fn build(scenario: &CrowdScenario, horizon: f64) -> Result<SweepingProblem> {
    scenario.validate()?;
    let initial = match &scenario.initial_positions {
        Some(pos) => Configuration::new(pos.iter().flatten().copied().collect())?,
        None => place_initial(scenario)?,
    };
    let mut constraints: Vec<Box<dyn Constraint>> = Vec::with_capacity(scenario.pair_count());
    for i in 0..scenario.count {
        for j in i + 1..scenario.count {
            constraints.push(Box::new(disk_constraint(scenario, i, j)?));
        }
    }
    constraints.extend(wall_constraints(scenario)?);
    let field_scenario = scenario.clone();
    let outward = scenario.exit_wall()?.outward_normal();
    let perturbation = move |_t: f64, q: &[f64]| velocity_field(&field_scenario, outward, q);
    SweepingProblem::new(constraints, Box::new(perturbation), initial, horizon)
}

/// Heuristic assumption constants for a crowd scenario.
///
/// Every pair gradient has norm `√2` and every wall or jamb gradient norm 1,
/// so `α = β = √2` is used (jamb and wall bounds are looser). The pair
/// Hessian has norm `2/s` at separation `s`; `M` evaluates it at `s = r`,
/// half the contact distance, so that segments between nearby
/// configurations stay covered.
pub fn derived_params(scenario: &CrowdScenario) -> Result<AssumptionParams> {
    scenario.validate()?;
    let sqrt2 = std::f64::consts::SQRT_2;
    let params = AssumptionParams {
        alpha: sqrt2,
        beta: sqrt2,
        m_bound: 2.0 / scenario.radius,
        rho: scenario.radius,
        gamma: 1.0,
        c_margin: 1.0,
        k_lip: 1.0,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate_all, gradient_check};

    fn far_room(count: usize) -> CrowdScenario {
        CrowdScenario {
            room: Room {
                width: 100.0,
                height: 100.0,
            },
            exit_center: [100.0, 50.0],
            ..CrowdScenario::square_room(count, 1)
        }
    }

    #[test]
    fn pair_value_and_gradient() {
        let s = CrowdScenario::square_room(2, 0);
        let c = disk_constraint(&s, 0, 1).unwrap();
        let q = [0.0, 0.0, 1.0, 0.0];
        assert!((c.value(0.0, &q) - 0.6).abs() < 1e-15);
        let g = c.gradient(0.0, &q).unwrap();
        assert_eq!(g.to_dense(4), vec![-1.0, 0.0, 1.0, 0.0]);
        assert!((g.norm() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(c.value(0.0, &[0.0, 0.0, 0.4, 0.0]), 0.0);
    }

    #[test]
    fn coincident_centers_are_reported() {
        let s = CrowdScenario::square_room(3, 0);
        let c = disk_constraint(&s, 1, 2).unwrap();
        let err = c.gradient(0.0, &[0.0, 0.0, 2.0, 2.0, 2.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::CoincidentCenters { i: 1, j: 2 }));
        assert!(disk_constraint(&s, 2, 1).is_err());
        assert!(disk_constraint(&s, 1, 3).is_err());
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let s = CrowdScenario::square_room(3, 0);
        let c = disk_constraint(&s, 0, 2).unwrap();
        let q = [1.0, 2.0, 5.0, 5.0, 1.7, 2.9];
        assert!(gradient_check(&c, 0.0, &q, 1e-6) <= 1e-6);
    }

    #[test]
    fn walls_at_room_center() {
        let s = CrowdScenario::square_room(1, 0);
        let walls = wall_constraints(&s).unwrap();
        // Left, bottom and top walls, then the two jambs.
        assert_eq!(walls.len(), 5);
        let q = [5.0, 5.0];
        for w in &walls[..3] {
            assert!((w.value(0.0, &q) - 4.8).abs() < 1e-12);
        }
        let left = &walls[0];
        assert!((left.value(0.0, &[0.2, 3.0])).abs() < 1e-15);
        let expected = (25.0f64 + 1.5 * 1.5).sqrt() - 1.2;
        for w in &walls[3..] {
            assert!((w.value(0.0, &q) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn door_gap_admits_disk_iff_wide_enough() {
        let mut s = CrowdScenario::square_room(1, 0);
        let q = s.exit_center;
        for (spacing, open) in [(2.5, true), (2.3, false)] {
            s.jamb_spacing = spacing;
            let walls = wall_constraints(&s).unwrap();
            for w in &walls[3..] {
                assert_eq!(w.value(0.0, &q) > 0.0, open, "spacing {spacing}");
            }
        }
    }

    #[test]
    fn jamb_values_are_distance_minus_clearance() {
        let s = CrowdScenario::square_room(1, 0);
        let [a, b] = s.jamb_centers().unwrap();
        assert_eq!(a, [10.0, 3.5]);
        assert_eq!(b, [10.0, 6.5]);
        let walls = wall_constraints(&s).unwrap();
        let q = [8.0, 3.5];
        assert!((walls[3].value(0.0, &q) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn velocity_examples() {
        let s = CrowdScenario::square_room(3, 0);
        let q = [5.0, 5.0, 10.0, 5.0, 10.5, 7.0];
        let u = spontaneous_velocity(&s, &q).unwrap();
        assert_eq!(&u[0..2], &[1.0, 0.0]);
        assert_eq!(&u[2..4], &[0.0, 0.0]);
        assert_eq!(&u[4..6], &[1.0, 0.0]);
        let q = [1.0, 9.0, 3.0, 2.0, 9.9, 5.1];
        let u = spontaneous_velocity(&s, &q).unwrap();
        for c in u.chunks(2) {
            assert!((c[0].hypot(c[1]) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exit_must_lie_on_boundary() {
        let mut s = CrowdScenario::square_room(1, 0);
        s.exit_center = [5.0, 5.0];
        assert!(matches!(s.exit_wall(), Err(Error::InvalidScenario(_))));
        s.exit_center = [3.0, 10.0];
        assert_eq!(s.exit_wall().unwrap(), Wall::Top);
        s.exit_center = [0.0, 2.0];
        assert_eq!(s.exit_wall().unwrap(), Wall::Left);
    }

    #[test]
    fn constraint_counts() {
        let p = build(&far_room(2), 1.0).unwrap();
        assert_eq!(p.constraint_count(), 1 + 2 * 3 + 2 * 2);
        let p = build(&far_room(1), 1.0).unwrap();
        assert_eq!(p.constraint_count(), 3 + 2);
        assert_eq!(CrowdScenario::square_room(150, 0).pair_count(), 11175);
    }

    #[test]
    fn placement_is_deterministic_and_strictly_feasible() {
        let s = CrowdScenario::square_room(150, 7);
        let a = place_initial(&s).unwrap();
        let b = place_initial(&s).unwrap();
        assert_eq!(a, b);
        let p = build(&s, 1.0).unwrap();
        let margin = evaluate_all(&p, 0.0, &a).unwrap().into_iter().fold(f64::INFINITY, f64::min);
        assert!(margin >= 0.01 * s.radius - 1e-12, "margin {margin}");
        let other = place_initial(&CrowdScenario::square_room(150, 8)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn overfull_room_fails_placement() {
        let mut s = CrowdScenario::square_room(400, 0);
        s.room = Room {
            width: 3.0,
            height: 3.0,
        };
        s.exit_center = [3.0, 1.5];
        assert!(matches!(place_initial(&s), Err(Error::PlacementFailure { .. })));
    }

    #[test]
    fn explicit_positions_are_used() {
        let mut s = CrowdScenario::square_room(2, 0);
        s.initial_positions = Some(vec![[2.0, 2.0], [4.0, 4.0]]);
        let p = build(&s, 1.0).unwrap();
        assert_eq!(p.initial().as_slice(), &[2.0, 2.0, 4.0, 4.0]);
        s.initial_positions = Some(vec![[2.0, 2.0], [2.1, 2.0]]);
        assert!(matches!(build(&s, 1.0), Err(Error::InfeasibleInitial { index: 0, .. })));
        s.initial_positions = Some(vec![[2.0, 2.0]]);
        assert!(build(&s, 1.0).is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = CrowdScenario::square_room(5, 3);
        let text = serde_json::to_string(&s).unwrap();
        let back: CrowdScenario = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        let minimal = r#"{"count":2,"radius":0.2,"room":{"width":10,"height":10},
            "exit_center":[10,5],"desired_speed":1}"#;
        let m: CrowdScenario = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.jamb_radius, 1.0);
        assert_eq!(m.jamb_spacing, 3.0);
        assert!(serde_json::from_str::<CrowdScenario>(r#"{"count":2,"bogus":1}"#).is_err());
    }

    #[test]
    fn derived_params_are_valid() {
        let p = derived_params(&CrowdScenario::square_room(3, 0)).unwrap();
        assert_eq!(p.alpha, std::f64::consts::SQRT_2);
        assert_eq!(p.m_bound, 10.0);
    }
}
