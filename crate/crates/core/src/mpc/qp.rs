//! Dense strictly convex QP solver, dual active-set (Goldfarb-Idnani).
//!
//! ```text
//! minimize    ½ xᵀ G x + aᵀ x
//! subject to  E x  = e
//!             C x <= c
//! ```
//!
//! Starts from the unconstrained minimizer and adds violated constraints one
//! at a time, keeping the iterate dual feasible, so no feasible starting
//! point is needed. `G` must be positive definite.
//!
//! Multipliers are returned in the convention
//! `G x + a + Eᵀ λ_E + Cᵀ λ_I = 0`, `λ_I >= 0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached")]
    IterationLimit,
}

pub struct QpProblem<'a> {
    pub hessian: &'a DMatrix<f64>,
    pub gradient: &'a DVector<f64>,
    pub eq_matrix: &'a DMatrix<f64>,
    pub eq_rhs: &'a DVector<f64>,
    pub ineq_matrix: &'a DMatrix<f64>,
    pub ineq_rhs: &'a DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
}

/// Violation tolerance on constraints normalized by their row norm.
const FEAS_TOL: f64 = 1e-12;
const ZERO_TOL: f64 = 1e-14;

struct ActiveSet {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
}

impl ActiveSet {
    fn q(&self) -> usize {
        self.active.len()
    }

    fn rotate_j_cols(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let ja = self.j[(row, a)];
            let jb = self.j[(row, b)];
            self.j[(row, a)] = c * ja + s * jb;
            self.j[(row, b)] = -s * ja + c * jb;
        }
    }

    /// `d = Jᵀ n`.
    fn project(&self, normal: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| self.j.column(k).iter().zip(normal).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Primal step direction `J₂ d₂` and dual step direction `R⁻¹ d₁`.
    fn directions(&self, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.q();
        let mut z = vec![0.0; self.n];
        for k in q..self.n {
            let dk = d[k];
            if dk != 0.0 {
                for (zi, jk) in z.iter_mut().zip(self.j.column(k).iter()) {
                    *zi += jk * dk;
                }
            }
        }
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        (z, r)
    }

    fn add(&mut self, idx: usize, mut d: Vec<f64>, multiplier: f64) {
        let q = self.q();
        for i in (q + 1..self.n).rev() {
            let (a, b) = (d[i - 1], d[i]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_j_cols(i - 1, i, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(idx);
        self.u.push(multiplier);
    }

    fn drop(&mut self, pos: usize) {
        let q = self.q();
        for col in pos..q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        self.active.remove(pos);
        self.u.remove(pos);
        let q = q - 1;
        for k in pos..q {
            let (a, b) = (self.r[(k, k)], self.r[(k + 1, k)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q {
                let ra = self.r[(k, col)];
                let rb = self.r[(k + 1, col)];
                self.r[(k, col)] = c * ra + s * rb;
                self.r[(k + 1, col)] = -s * ra + c * rb;
            }
            self.rotate_j_cols(k, k + 1, c, s);
        }
    }
}

pub fn solve_qp(p: &QpProblem<'_>) -> Result<QpSolution, QpError> {
    let n = p.gradient.len();
    let me = p.eq_rhs.len();
    let mi = p.ineq_rhs.len();
    let m = me + mi;

    // Constraint normals in `nᵀx >= b` form, one contiguous column each.
    let mut normals = DMatrix::<f64>::zeros(n, m);
    let mut b = vec![0.0; m];
    for i in 0..me {
        for k in 0..n {
            normals[(k, i)] = p.eq_matrix[(i, k)];
        }
        b[i] = p.eq_rhs[i];
    }
    for i in 0..mi {
        for k in 0..n {
            normals[(k, me + i)] = -p.ineq_matrix[(i, k)];
        }
        b[me + i] = -p.ineq_rhs[i];
    }
    let norms: Vec<f64> = (0..m).map(|i| normals.column(i).norm().max(ZERO_TOL)).collect();

    let chol = p.hessian.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let mut j = DMatrix::<f64>::identity(n, n);
    if !chol.l().transpose().solve_upper_triangular_mut(&mut j) {
        return Err(QpError::NotPositiveDefinite);
    }
    let mut x = chol.solve(p.gradient);
    x.neg_mut();

    let mut set = ActiveSet { n, j, r: DMatrix::zeros(n, n), active: Vec::new(), u: Vec::new() };
    let mut in_set = vec![false; m];
    let mut eq_sign = vec![1.0; me];
    let mut redundant = vec![false; me];
    let slack = |x: &DVector<f64>, normals: &DMatrix<f64>, i: usize, sign: f64| {
        sign * normals.column(i).dot(x) - sign * b[i]
    };

    let max_iter = 10 * (n + m) + 100;
    let mut iterations = 0;
    let mut next_eq = 0;
    loop {
        // Equalities first, in order; then the most violated inequality.
        let mut pick = None;
        if next_eq < me {
            let i = next_eq;
            next_eq += 1;
            let s = slack(&x, &normals, i, 1.0);
            eq_sign[i] = if s > 0.0 { -1.0 } else { 1.0 };
            pick = Some(i);
        }
        if pick.is_none() {
            let mut worst = -FEAS_TOL;
            for i in me..m {
                if in_set[i] {
                    continue;
                }
                let s = slack(&x, &normals, i, 1.0) / norms[i];
                if s < worst {
                    worst = s;
                    pick = Some(i);
                }
            }
        }
        let Some(pc) = pick else { break };
        let sign = if pc < me { eq_sign[pc] } else { 1.0 };
        let normal: Vec<f64> = normals.column(pc).iter().map(|v| sign * v).collect();
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let d = set.project(&normal);
            let (z, r) = set.directions(&d);
            let s_p = slack(&x, &normals, pc, sign);

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..r.len() {
                if set.active[k] >= me && r[k] > ZERO_TOL {
                    let ratio = set.u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn: f64 = z.iter().zip(&normal).map(|(a, b)| a * b).sum();
            let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let t2 = if z_norm > ZERO_TOL * norms[pc] && zn > ZERO_TOL * norms[pc] * norms[pc] {
                -s_p / zn
            } else {
                f64::INFINITY
            };

            if t2.is_infinite() {
                if pc < me && s_p.abs() <= FEAS_TOL * norms[pc] {
                    // Linearly dependent on the active equalities and already met.
                    redundant[pc] = true;
                    break;
                }
                let Some(l) = drop_at else {
                    return Err(QpError::Infeasible);
                };
                for k in 0..r.len() {
                    set.u[k] -= t1 * r[k];
                }
                u_plus += t1;
                in_set[set.active[l]] = false;
                set.drop(l);
                continue;
            }

            let t = t1.min(t2).max(0.0);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += t * zi;
            }
            for k in 0..r.len() {
                set.u[k] -= t * r[k];
            }
            u_plus += t;
            if t2 <= t1 {
                let d = set.project(&normal);
                set.add(pc, d, u_plus);
                in_set[pc] = true;
                break;
            }
            let l = drop_at.expect("partial step implies a blocking constraint");
            in_set[set.active[l]] = false;
            set.drop(l);
        }
    }

    let mut eq_mult = DVector::zeros(me);
    let mut ineq_mult = DVector::zeros(mi);
    for (k, &c) in set.active.iter().enumerate() {
        if c < me {
            eq_mult[c] = -eq_sign[c] * set.u[k];
        } else {
            ineq_mult[c - me] = set.u[k].max(0.0);
        }
    }
    Ok(QpSolution { x, eq_multipliers: eq_mult, ineq_multipliers: ineq_mult, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(
        g: &DMatrix<f64>,
        a: &DVector<f64>,
        e: &DMatrix<f64>,
        ev: &DVector<f64>,
        c: &DMatrix<f64>,
        cv: &DVector<f64>,
    ) -> Result<QpSolution, QpError> {
        solve_qp(&QpProblem {
            hessian: g,
            gradient: a,
            eq_matrix: e,
            eq_rhs: ev,
            ineq_matrix: c,
            ineq_rhs: cv,
        })
    }

    #[test]
    fn textbook_example() {
        // min ½x² + ½y² + x  s.t. x + 2y >= 1  →  (-0.6, 0.8)
        let g = DMatrix::identity(2, 2);
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[-1.0, -2.0]);
        let cv = DVector::from_vec(vec![-1.0]);
        let sol = solve(&g, &a, &DMatrix::zeros(0, 2), &DVector::zeros(0), &c, &cv).unwrap();
        assert!((sol.x[0] + 0.6).abs() < 1e-12 && (sol.x[1] - 0.8).abs() < 1e-12);
        assert!((sol.ineq_multipliers[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let g = DMatrix::identity(1, 1);
        let a = DVector::zeros(1);
        let c = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let cv = DVector::from_vec(vec![-1.0, -1.0]); // x <= -1 and x >= 1
        let r = solve(&g, &a, &DMatrix::zeros(0, 1), &DVector::zeros(0), &c, &cv);
        assert_eq!(r.unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn redundant_equality_tolerated() {
        let g = DMatrix::identity(2, 2);
        let a = DVector::from_vec(vec![-1.0, -1.0]);
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let ev = DVector::from_vec(vec![1.0, 2.0]);
        let sol = solve(&g, &a, &e, &ev, &DMatrix::zeros(0, 2), &DVector::zeros(0)).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-12 && (sol.x[1] - 0.5).abs() < 1e-12);
    }

    /// KKT conditions checked directly on random feasible problems.
    #[test]
    fn random_problems_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..12);
            let me = rng.gen_range(0..n.min(4));
            let mi = rng.gen_range(0..3 * n);
            let mut m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            m = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
            let a = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            // Constraints built around a known feasible point.
            let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let e = DMatrix::from_fn(me, n, |_, _| rng.gen_range(-1.0..1.0));
            let ev = &e * &x0;
            let c = DMatrix::from_fn(mi, n, |_, _| rng.gen_range(-1.0..1.0));
            let cv = &c * &x0 + DVector::from_fn(mi, |_, _| rng.gen_range(0.0..0.5));
            let sol = solve(&m, &a, &e, &ev, &c, &cv).unwrap();
            let x = &sol.x;
            let stat = &m * x + &a + e.transpose() * &sol.eq_multipliers + c.transpose() * &sol.ineq_multipliers;
            assert!(stat.amax() < 1e-8, "stationarity {}", stat.amax());
            assert!((&e * x - &ev).amax() < 1e-9);
            let slack = &c * x - &cv;
            for i in 0..mi {
                assert!(slack[i] < 1e-9);
                assert!(sol.ineq_multipliers[i] >= 0.0);
                assert!((sol.ineq_multipliers[i] * slack[i]).abs() < 1e-8);
            }
        }
    }
}
