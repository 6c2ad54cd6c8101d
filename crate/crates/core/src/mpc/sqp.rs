//! Line-search SQP for least-squares objectives with smooth constraints.
//!
//! Each iteration solves a QP built from the Gauss-Newton Hessian (plus a
//! small Levenberg shift so it is positive definite) and the linearized
//! constraints, then backtracks on the ℓ1 merit function.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, QpError, QpProblem, QpSolution};

/// A nonlinear program `min f(x)  s.t.  c_E(x) = 0, c_I(x) <= 0`.
///
/// Jacobian buffers are passed in zeroed; implementations only write
/// nonzeros.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    /// Objective value; accumulates the gradient and a positive
    /// semidefinite Hessian approximation when requested.
    fn objective(&self, x: &[f64], derivs: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>) -> f64;
    fn eq(&self, x: &[f64], vals: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>);
    fn ineq(&self, x: &[f64], vals: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>);
    /// When `k > 0`, the first `k` variables are fixed by the equalities:
    /// there are exactly `k` of them and their Jacobian restricted to those
    /// variables is lower triangular with a nonzero diagonal. The QP step is
    /// then solved over the remaining variables only.
    fn dependent_vars(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    pub max_iterations: usize,
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub levenberg: f64,
    /// Eliminate dependent variables before the QP when the problem allows.
    pub condense: bool,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self { max_iterations: 50, kkt_tol: 1e-6, feas_tol: 1e-8, levenberg: 1e-6, condense: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    IterationLimit,
    LineSearchFailed,
    QpFailed,
}

#[derive(Debug, Clone)]
pub struct SqpResult {
    pub x: Vec<f64>,
    pub status: SqpStatus,
    pub iterations: usize,
    pub qp_iterations: usize,
    pub objective: f64,
    /// Infinity norm of the Lagrangian gradient with the last multipliers.
    pub kkt: f64,
    /// Largest equality or inequality violation.
    pub infeasibility: f64,
    pub qp_error: Option<QpError>,
}

impl SqpResult {
    pub fn converged(&self) -> bool {
        self.status == SqpStatus::Converged
    }
}

fn violation(ce: &DVector<f64>, ci: &DVector<f64>) -> (f64, f64) {
    let l1 = ce.iter().map(|v| v.abs()).sum::<f64>() + ci.iter().map(|v| v.max(0.0)).sum::<f64>();
    let linf = ce.amax().max(ci.iter().fold(0.0, |m, v| m.max(*v)));
    (l1, linf)
}

pub fn solve<P: Nlp>(nlp: &P, x0: &[f64], opts: &SqpOptions) -> SqpResult {
    let (n, me, mi) = (nlp.num_vars(), nlp.num_eq(), nlp.num_ineq());
    let mut x = x0.to_vec();
    let mut g = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut ae = DMatrix::zeros(me, n);
    let mut ai = DMatrix::zeros(mi, n);
    let mut ce = DVector::zeros(me);
    let mut ci = DVector::zeros(mi);
    let mut trial_ce = DVector::zeros(me);
    let mut trial_ci = DVector::zeros(mi);
    let mut mu: f64 = 1.0;
    let mut qp_iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut status = SqpStatus::IterationLimit;
    let mut qp_error = None;
    let mut iterations = 0;

    let mut f = nlp.objective(&x, None);
    while iterations < opts.max_iterations {
        g.fill(0.0);
        hess.fill(0.0);
        ae.fill(0.0);
        ai.fill(0.0);
        f = nlp.objective(&x, Some((&mut g, &mut hess)));
        nlp.eq(&x, &mut ce, Some(&mut ae));
        nlp.ineq(&x, &mut ci, Some(&mut ai));
        let (viol_l1, viol_inf) = violation(&ce, &ci);

        let scale = hess.diagonal().amax().max(1.0);
        for i in 0..n {
            hess[(i, i)] += opts.levenberg * scale;
        }
        let nd = nlp.dependent_vars();
        let qp = if opts.condense && nd > 0 && nd == me && nd < n {
            condensed_qp(&hess, &g, &ae, &ce, &ai, &ci, nd)
        } else {
            solve_qp(&QpProblem {
                hessian: &hess,
                gradient: &g,
                eq_matrix: &ae,
                eq_rhs: &-&ce,
                ineq_matrix: &ai,
                ineq_rhs: &-&ci,
            })
        };
        let sol = match qp {
            Ok(s) => s,
            Err(e) => {
                qp_error = Some(e);
                status = SqpStatus::QpFailed;
                break;
            }
        };
        iterations += 1;
        qp_iterations += sol.iterations;
        let d = &sol.x;

        let lagr = &g + ae.transpose() * &sol.eq_multipliers + ai.transpose() * &sol.ineq_multipliers;
        kkt = lagr.amax();
        let complementarity = sol
            .ineq_multipliers
            .iter()
            .zip(ci.iter())
            .fold(0.0_f64, |m, (l, c)| m.max((l * c).abs()));
        if viol_inf <= opts.feas_tol && kkt <= opts.kkt_tol && complementarity <= opts.kkt_tol {
            status = SqpStatus::Converged;
            break;
        }

        let lam_max = sol.eq_multipliers.amax().max(sol.ineq_multipliers.amax());
        if mu < 1.1 * lam_max {
            mu = 2.0 * lam_max;
        }
        let merit = f + mu * viol_l1;
        let slope = g.dot(d) - mu * viol_l1;
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut trial = x.clone();
        while alpha >= 1e-10 {
            for ((t, xi), di) in trial.iter_mut().zip(&x).zip(d.iter()) {
                *t = xi + alpha * di;
            }
            let ft = nlp.objective(&trial, None);
            nlp.eq(&trial, &mut trial_ce, None);
            nlp.ineq(&trial, &mut trial_ci, None);
            let (tl1, _) = violation(&trial_ce, &trial_ci);
            if ft + mu * tl1 <= merit + 1e-4 * alpha * slope.min(0.0) {
                accepted = true;
                f = ft;
                break;
            }
            alpha *= 0.5;
        }
        let step = alpha * d.amax();
        if !accepted {
            // Stuck at the feasible optimum up to rounding: call it done.
            if viol_inf <= opts.feas_tol && d.amax() <= 1e-9 {
                status = SqpStatus::Converged;
            } else {
                status = SqpStatus::LineSearchFailed;
            }
            break;
        }
        x.copy_from_slice(&trial);
        if step <= 1e-12 {
            nlp.eq(&x, &mut ce, None);
            nlp.ineq(&x, &mut ci, None);
            if violation(&ce, &ci).1 <= opts.feas_tol {
                status = SqpStatus::Converged;
                break;
            }
        }
    }

    nlp.eq(&x, &mut ce, None);
    nlp.ineq(&x, &mut ci, None);
    let (_, infeasibility) = violation(&ce, &ci);
    SqpResult { x, status, iterations, qp_iterations, objective: f, kkt, infeasibility, qp_error }
}

/// QP step with the first `nd` variables eliminated through the
/// triangular equality block: `d_x = s + T d_u`.
fn condensed_qp(
    hess: &DMatrix<f64>,
    g: &DVector<f64>,
    ae: &DMatrix<f64>,
    ce: &DVector<f64>,
    ai: &DMatrix<f64>,
    ci: &DVector<f64>,
    nd: usize,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let nu = n - nd;
    // Row r of [T | s] is column r of `xt`, solved by forward substitution
    // on E_x [T | s] = -[E_u | c].
    let mut xt = DMatrix::<f64>::zeros(nu + 1, nd);
    for r in 0..nd {
        let mut row = DVector::<f64>::zeros(nu + 1);
        for j in 0..nu {
            row[j] = -ae[(r, nd + j)];
        }
        row[nu] = -ce[r];
        for c in 0..r {
            let e = ae[(r, c)];
            if e != 0.0 {
                row.axpy(-e, &xt.column(c), 1.0);
            }
        }
        let diag = ae[(r, r)];
        if diag == 0.0 {
            return Err(QpError::NotPositiveDefinite);
        }
        xt.set_column(r, &(row / diag));
    }
    // M = [T; I], shift = [s; 0].
    let mut m = DMatrix::<f64>::zeros(n, nu);
    let mut shift = DVector::<f64>::zeros(n);
    for r in 0..nd {
        for j in 0..nu {
            m[(r, j)] = xt[(j, r)];
        }
        shift[r] = xt[(nu, r)];
    }
    for j in 0..nu {
        m[(nd + j, j)] = 1.0;
    }
    let bm = hess * &m;
    let h_red = m.transpose() * &bm;
    let g_red = m.transpose() * (g + hess * &shift);
    let mi = ci.len();
    let mut c_red = DMatrix::<f64>::zeros(mi, nu);
    let mut rhs = DVector::<f64>::zeros(mi);
    for i in 0..mi {
        let mut b = -ci[i];
        for j in 0..n {
            let a = ai[(i, j)];
            if a != 0.0 {
                b -= a * shift[j];
                for k in 0..nu {
                    c_red[(i, k)] += a * m[(j, k)];
                }
            }
        }
        rhs[i] = b;
    }
    let empty_m = DMatrix::zeros(0, nu);
    let empty_v = DVector::zeros(0);
    let sol = solve_qp(&QpProblem {
        hessian: &h_red,
        gradient: &g_red,
        eq_matrix: &empty_m,
        eq_rhs: &empty_v,
        ineq_matrix: &c_red,
        ineq_rhs: &rhs,
    })?;
    let d = &m * &sol.x + shift;
    // Equality multipliers from the dependent rows of stationarity:
    // E_xᵀ λ_E = −(B d + g + A_Iᵀ λ_I)_x, back substitution.
    let resid = hess * &d + g + ai.transpose() * &sol.ineq_multipliers;
    let mut lam = DVector::<f64>::zeros(nd);
    for r in (0..nd).rev() {
        let mut acc = -resid[r];
        for c in r + 1..nd {
            acc -= ae[(c, r)] * lam[c];
        }
        lam[r] = acc / ae[(r, r)];
    }
    Ok(QpSolution { x: d, eq_multipliers: lam, ineq_multipliers: sol.ineq_multipliers, iterations: sol.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock-like least squares on a disc, with a linear equality.
    struct Toy;

    impl Nlp for Toy {
        fn num_vars(&self) -> usize {
            3
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64], derivs: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>) -> f64 {
            // r1 = 10(y − x²), r2 = 1 − x, r3 = z
            let r = [10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0], x[2]];
            let jr = [[-20.0 * x[0], 10.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
            if let Some((g, h)) = derivs {
                for k in 0..3 {
                    for i in 0..3 {
                        g[i] += 2.0 * r[k] * jr[k][i];
                        for j in 0..3 {
                            h[(i, j)] += 2.0 * jr[k][i] * jr[k][j];
                        }
                    }
                }
            }
            r.iter().map(|v| v * v).sum()
        }
        fn eq(&self, x: &[f64], vals: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) {
            vals[0] = x[2] - 0.5;
            if let Some(j) = jac {
                j[(0, 2)] = 1.0;
            }
        }
        fn ineq(&self, x: &[f64], vals: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) {
            vals[0] = x[0] * x[0] + x[1] * x[1] - 0.5;
            if let Some(j) = jac {
                j[(0, 0)] = 2.0 * x[0];
                j[(0, 1)] = 2.0 * x[1];
            }
        }
    }

    #[test]
    fn solves_constrained_rosenbrock() {
        let opts = SqpOptions { max_iterations: 200, ..SqpOptions::default() };
        let r = solve(&Toy, &[0.0, 0.0, 0.0], &opts);
        assert!(r.converged(), "{:?}", r.status);
        assert!((r.x[2] - 0.5).abs() < 1e-8);
        assert!(r.x[0] * r.x[0] + r.x[1] * r.x[1] <= 0.5 + 1e-8);
        // The free optimum (1, 1) is outside the disc, so scan its boundary.
        let rad = 0.5f64.sqrt();
        let best = (0..200_000)
            .map(|i| {
                let a = i as f64 / 200_000.0 * std::f64::consts::TAU;
                let (x, y) = (rad * a.cos(), rad * a.sin());
                (100.0 * (y - x * x).powi(2) + (1.0 - x).powi(2), x, y)
            })
            .fold((f64::INFINITY, 0.0, 0.0), |m, c| if c.0 < m.0 { c } else { m });
        assert!((r.x[0] - best.1).abs() < 1e-4 && (r.x[1] - best.2).abs() < 1e-4, "{:?} vs {best:?}", r.x);
    }

    #[test]
    fn deterministic() {
        let a = solve(&Toy, &[0.1, -0.2, 3.0], &SqpOptions::default());
        let b = solve(&Toy, &[0.1, -0.2, 3.0], &SqpOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }
}
