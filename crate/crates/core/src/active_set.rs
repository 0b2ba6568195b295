//! Dual active-set projection (Goldfarb–Idnani with identity Hessian).
//!
//! Starting from the unconstrained minimizer `x = y`, violated half-spaces
//! are added one at a time while the multipliers of the working set stay
//! nonnegative; a working-set constraint whose multiplier would turn
//! negative is dropped. The working-set normals are kept linearly
//! independent through a QR factorization `N_A = J R` updated by Givens
//! rotations, so every iteration costs `O(d^2)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::polyproj::Polyhedron;

/// Minimizer of `|x - y|` over `poly` and one multiplier per half-space,
/// with `x = y + Σ λ_i n_i`.
pub(crate) struct Exact {
    pub point: Vec<f64>,
    pub multipliers: Vec<f64>,
}

struct Factor {
    d: usize,
    /// Orthogonal `d x d`; the first `q` columns span the working normals.
    j: DMatrix<f64>,
    /// Upper triangular `q x q` block in the top-left corner.
    r: DMatrix<f64>,
    q: usize,
}

impl Factor {
    fn new(d: usize) -> Self {
        Self {
            d,
            j: DMatrix::identity(d, d),
            r: DMatrix::zeros(d, d),
            q: 0,
        }
    }

    /// `J^T n`.
    fn project(&self, n: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|c| self.j.column(c).iter().zip(n).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn rotate_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.d {
            let (x, y) = (self.j[(row, a)], self.j[(row, b)]);
            self.j[(row, a)] = c * x + s * y;
            self.j[(row, b)] = -s * x + c * y;
        }
    }

    /// Appends a normal whose projection `dv = J^T n` is given.
    fn add(&mut self, mut dv: Vec<f64>) {
        let q = self.q;
        for i in (q + 1..self.d).rev() {
            let (a, b) = (dv[i - 1], dv[i]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            dv[i - 1] = h;
            dv[i] = 0.0;
            self.rotate_columns(i - 1, i, c, s);
        }
        for (row, v) in dv.iter().take(q + 1).enumerate() {
            self.r[(row, q)] = *v;
        }
        self.q += 1;
    }

    /// Removes working-set column `l`.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (a, b) = (self.r[(k, k)], self.r[(k + 1, k)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let (x, y) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * x + s * y;
                self.r[(k + 1, col)] = -s * x + c * y;
            }
            self.rotate_columns(k, k + 1, c, s);
        }
        self.q -= 1;
    }

    /// `R^{-1} v` for the leading `q` entries of `v`.
    fn solve_r(&self, v: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut x = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = v[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * x[k];
            }
            x[i] = acc / self.r[(i, i)];
        }
        x
    }

    /// `Σ_{i >= q} J_i dv_i`, the component of `n` orthogonal to the span.
    fn orthogonal_part(&self, dv: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.d];
        for (i, &w) in dv.iter().enumerate().skip(self.q) {
            if w != 0.0 {
                for (zr, jr) in z.iter_mut().zip(self.j.column(i).iter()) {
                    *zr += w * jr;
                }
            }
        }
        z
    }
}

/// Solves the projection exactly up to roundoff. `prefer` lists half-spaces
/// to add first while they are violated (for example the support of an
/// approximate dual solution). `tol` is the slack below which a half-space
/// counts as violated.
pub(crate) fn project_exact(y: &[f64], poly: &Polyhedron, prefer: &[usize], tol: f64) -> Result<Exact> {
    let d = poly.dimension();
    let hs = poly.halfspaces();
    let p = hs.len();
    let dense: Vec<Vec<f64>> = hs.iter().map(|h| h.normal().to_dense(d)).collect();
    let mut x = y.to_vec();
    let mut factor = Factor::new(d);
    let mut working: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_working = vec![false; p];
    let max_outer = 10 * (p + d) + 100;
    let mut preferred = prefer.iter().copied();

    for _ in 0..max_outer {
        // Pick a violated half-space: preferred ones first, then the most
        // violated by normalized slack.
        let slack = |i: usize| hs[i].slack(&x);
        let mut chosen = None;
        for i in preferred.by_ref() {
            if i < p && !in_working[i] && slack(i) < -tol {
                chosen = Some(i);
                break;
            }
        }
        if chosen.is_none() {
            chosen = (0..p)
                .filter(|&i| !in_working[i])
                .map(|i| (i, slack(i) / hs[i].normal_norm()))
                .filter(|&(i, v)| v * hs[i].normal_norm() < -tol)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
        }
        let Some(np) = chosen else {
            let mut multipliers = vec![0.0; p];
            for (&i, &m) in working.iter().zip(&u) {
                multipliers[i] = m.max(0.0);
            }
            return Ok(Exact { point: x, multipliers });
        };

        let n = &dense[np];
        let n_norm = hs[np].normal_norm();
        let mut u_new = 0.0;
        loop {
            let dv = factor.project(n);
            let z = factor.orthogonal_part(&dv);
            let r = factor.solve_r(&dv);
            let z_sq: f64 = dv[factor.q..].iter().map(|v| v * v).sum();
            let dependent = z_sq <= (1e-10 * n_norm).powi(2);

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let t2 = if dependent {
                f64::INFINITY
            } else {
                (-hs[np].slack(&x) / z_sq).max(0.0)
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::Infeasible {
                    multiplier_norm: f64::INFINITY,
                });
            }
            let t = t1.min(t2);
            if !dependent {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_new += t;
            if t2 <= t1 {
                factor.add(dv);
                working.push(np);
                u.push(u_new);
                in_working[np] = true;
                break;
            }
            let k = drop_at.expect("finite partial step has a blocking index");
            factor.drop(k);
            in_working[working[k]] = false;
            working.remove(k);
            u.remove(k);
        }
    }
    Err(Error::MaxIterations {
        iterations: max_outer,
        residual: poly.max_violation(&x),
        best: Box::new(crate::polyproj::ProjectionResult {
            point: crate::model::Configuration::from_raw(x),
            multipliers: vec![0.0; p],
            residual: f64::INFINITY,
            iterations: max_outer,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{self, SparseVector};
    use crate::polyproj::{project_oracle, HalfSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Polyhedron) {
        let d = rng.random_range(1..=6);
        let p = rng.random_range(1..=8);
        let center: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hs = (0..p)
            .map(|_| {
                let n: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let margin = rng.random_range(0.0..1.0);
                let offset = linalg::dot(&n, &center) - margin;
                HalfSpace::new(SparseVector::from_dense(&n), offset).unwrap()
            })
            .collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        (y, Polyhedron::new(d, hs).unwrap())
    }

    #[test]
    fn matches_oracle_on_random_polyhedra() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let (y, poly) = random_instance(&mut rng);
            let exact = project_exact(&y, &poly, &[], 1e-12).unwrap();
            let oracle = project_oracle(&y, &poly).unwrap();
            assert!(linalg::distance(&exact.point, &oracle) < 1e-8);
            assert!(poly.max_violation(&exact.point) < 1e-10);
        }
    }

    #[test]
    fn dependent_and_duplicate_normals() {
        let hs = |n: &[f64], b: f64| HalfSpace::new(SparseVector::from_dense(n), b).unwrap();
        let poly = Polyhedron::new(
            2,
            vec![hs(&[1.0, 0.0], 1.0), hs(&[1.0, 0.0], 1.0), hs(&[2.0, 0.0], 2.0), hs(&[0.0, 1.0], 0.0), hs(&[1.0, 1.0], 1.0)],
        )
        .unwrap();
        let e = project_exact(&[-3.0, -3.0], &poly, &[4, 2, 1], 1e-12).unwrap();
        assert!(linalg::distance(&e.point, &[1.0, 0.0]) < 1e-12);
        // Stationarity: x = y + Σ λ_i n_i.
        let mut x = vec![-3.0, -3.0];
        for (h, &l) in poly.halfspaces().iter().zip(&e.multipliers) {
            h.normal().axpy_into(l, &mut x);
        }
        assert!(linalg::distance(&x, &e.point) < 1e-12);
    }

    #[test]
    fn empty_polyhedron_is_infeasible() {
        let hs = |n: &[f64], b: f64| HalfSpace::new(SparseVector::from_dense(n), b).unwrap();
        let poly = Polyhedron::new(1, vec![hs(&[1.0], 1.5), hs(&[-1.0], -1.0)]).unwrap();
        assert!(matches!(project_exact(&[1.0], &poly, &[], 1e-12), Err(Error::Infeasible { .. })));
    }
}
