//! Direct transcription of the horizon problem.
//!
//! Variables are stacked as all states `x(t+k|t)`, `k = 0..=H`, robot-major
//! within a step, followed by all controls `u(t+k|t)`, `k = 0..H`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ButterflyMode, ControlInput, RobotState};
use crate::geometry::{rotate, rotate_dtheta, Point2};
use crate::{Error, Result};

use super::costs::{self, Residual, StateLayout};
use super::sqp::Nlp;
use super::{AlignPair, Behavior, MaintainedPair, MpcConfig};

const SD: usize = RobotState::DIM;
const CD: usize = ControlInput::DIM;
/// Relative yaw allowed across a held side connection.
const KNOB_YAW_TOL: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct MpcProblem {
    n_robots: usize,
    x0: Vec<RobotState>,
    behavior: Behavior,
    maintained: Vec<MaintainedPair>,
    maintained_points: Vec<AlignPair>,
    /// Per maintained pair, extra signed distance granted to its rows.
    relax: Vec<f64>,
    cfg: MpcConfig,
}

fn check_robot(r: usize, n: usize) -> Result<()> {
    if r >= n {
        return Err(Error::InvalidPair(format!("robot index {r} out of range for {n} robots")));
    }
    Ok(())
}

fn check_pair(a: usize, b: usize, n: usize) -> Result<()> {
    check_robot(a, n)?;
    check_robot(b, n)?;
    if a == b {
        return Err(Error::InvalidPair(format!("pair joins robot {a} to itself")));
    }
    Ok(())
}

/// Assembles the horizon problem from the current states.
pub fn build_problem(
    states: &[RobotState],
    behavior: &Behavior,
    maintained: &[MaintainedPair],
    cfg: &MpcConfig,
) -> Result<MpcProblem> {
    cfg.validate()?;
    let n = states.len();
    if n == 0 {
        return Err(Error::InvalidMpcConfig("no robots".into()));
    }
    if let Some(i) = states.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidMpcConfig(format!("state of robot {i} is not finite")));
    }
    match behavior {
        Behavior::Connect(pairs) => {
            for (a, b) in pairs {
                check_pair(a.robot, b.robot, n)?;
            }
        }
        Behavior::Goto(goals) if goals.len() != n => {
            return Err(Error::InvalidMpcConfig(format!("{} goals for {n} robots", goals.len())));
        }
        Behavior::Velocity(t) if t.len() != n => {
            return Err(Error::InvalidMpcConfig(format!("{} velocity targets for {n} robots", t.len())));
        }
        _ => {}
    }
    for m in maintained {
        let (a, b) = m.robots();
        check_pair(a, b, n)?;
    }
    Ok(MpcProblem {
        n_robots: n,
        x0: states.to_vec(),
        behavior: behavior.clone(),
        maintained_points: maintained.iter().map(|m| m.points()).collect(),
        relax: vec![0.0; maintained.len()],
        maintained: maintained.to_vec(),
        cfg: cfg.clone(),
    })
}

impl MpcProblem {
    pub fn n_robots(&self) -> usize {
        self.n_robots
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn initial_states(&self) -> &[RobotState] {
        &self.x0
    }

    pub fn maintained(&self) -> &[MaintainedPair] {
        &self.maintained
    }

    pub fn n_state_vars(&self) -> usize {
        SD * self.n_robots * (self.cfg.horizon + 1)
    }

    pub fn n_control_vars(&self) -> usize {
        CD * self.n_robots * self.cfg.horizon
    }

    pub fn n_vars(&self) -> usize {
        self.n_state_vars() + self.n_control_vars()
    }

    pub fn state_index(&self, k: usize, robot: usize) -> usize {
        (k * self.n_robots + robot) * SD
    }

    pub fn control_index(&self, k: usize, robot: usize) -> usize {
        self.n_state_vars() + (k * self.n_robots + robot) * CD
    }

    fn layout(&self, k: usize) -> StateLayout {
        StateLayout { base: self.state_index(k, 0) }
    }

    fn n_anchor_pairs(&self) -> usize {
        self.maintained.iter().filter(|m| matches!(m, MaintainedPair::Anchor { .. })).count()
    }

    fn n_knob_pairs(&self) -> usize {
        self.maintained.len() - self.n_anchor_pairs()
    }

    /// Number of polygon membership rows: three per anchor pair per step.
    pub fn pip_rows(&self) -> usize {
        3 * self.n_anchor_pairs() * self.cfg.constraint_horizon
    }

    fn knob_rows(&self) -> usize {
        6 * self.n_knob_pairs() * self.cfg.constraint_horizon
    }

    fn bound_rows(&self) -> usize {
        4 * self.n_robots * self.cfg.horizon
    }

    pub fn n_eq(&self) -> usize {
        self.n_state_vars()
    }

    pub fn n_ineq(&self) -> usize {
        self.pip_rows() + self.knob_rows() + 2 * self.bound_rows()
    }

    pub fn relax(&self) -> &[f64] {
        &self.relax
    }

    /// Grants maintained pair `i` an extra `amount` meters of violation.
    pub fn set_relax(&mut self, i: usize, amount: f64) {
        self.relax[i] = amount.max(0.0);
    }

    /// States from `x0` under the given controls (`H × N`, step-major).
    pub fn rollout(&self, controls: &[ControlInput]) -> Vec<f64> {
        let (n, h, dt) = (self.n_robots, self.cfg.horizon, self.cfg.dt_s);
        let mut z = vec![0.0; self.n_vars()];
        for (r, s) in self.x0.iter().enumerate() {
            z[self.state_index(0, r)..][..SD].copy_from_slice(&s.to_array());
        }
        for k in 0..h {
            for r in 0..n {
                let u = controls.get(k * n + r).copied().unwrap_or_default();
                let i = self.state_index(k, r);
                let [px, py, th, v, w] = [z[i], z[i + 1], z[i + 2], z[i + 3], z[i + 4]];
                let j = self.state_index(k + 1, r);
                z[j] = px + v * th.cos() * dt;
                z[j + 1] = py + v * th.sin() * dt;
                z[j + 2] = th + w * dt;
                z[j + 3] = v + u.v_dot * dt;
                z[j + 4] = w + u.w_dot * dt;
                let c = self.control_index(k, r);
                z[c] = u.v_dot;
                z[c + 1] = u.w_dot;
            }
        }
        z
    }

    pub fn controls(&self, z: &[f64]) -> Vec<ControlInput> {
        let mut out = Vec::with_capacity(self.n_robots * self.cfg.horizon);
        for k in 0..self.cfg.horizon {
            for r in 0..self.n_robots {
                let c = self.control_index(k, r);
                out.push(ControlInput::new(z[c], z[c + 1]));
            }
        }
        out
    }

    pub fn first_controls(&self, z: &[f64]) -> Vec<ControlInput> {
        self.controls(z)[..self.n_robots].to_vec()
    }

    /// Predicted states per step, headings normalized.
    pub fn trajectory(&self, z: &[f64]) -> Vec<Vec<RobotState>> {
        (0..=self.cfg.horizon)
            .map(|k| {
                (0..self.n_robots)
                    .map(|r| {
                        let i = self.state_index(k, r);
                        RobotState::new(z[i], z[i + 1], z[i + 2], z[i + 3], z[i + 4])
                    })
                    .collect()
            })
            .collect()
    }

    fn behavior_residuals(&self, z: &[f64], k: usize, scale: f64, out: &mut Vec<Residual>) {
        let (w, l) = (&self.cfg.weights, self.layout(k));
        match &self.behavior {
            Behavior::Connect(pairs) => {
                costs::connection_residuals(z, l, pairs, w, self.cfg.angle_cost_cap, scale, out)
            }
            Behavior::Goto(goals) => costs::goal_residuals(z, l, goals, w, scale, out),
            Behavior::Velocity(t) => costs::velocity_residuals(z, l, t, w, scale, out),
        }
    }

    pub(crate) fn residuals(&self, z: &[f64], out: &mut Vec<Residual>) {
        out.clear();
        let (cfg, w) = (&self.cfg, &self.cfg.weights);
        let h = cfg.horizon;
        let stage = w.w_m.sqrt();
        for k in 0..h {
            self.behavior_residuals(z, k, stage, out);
        }
        self.behavior_residuals(z, h, w.w_f.sqrt(), out);
        if !self.maintained_points.is_empty() && w.w_c > 0.0 {
            for k in 0..=cfg.constraint_horizon {
                costs::connection_residuals(
                    z,
                    self.layout(k),
                    &self.maintained_points,
                    w,
                    cfg.angle_cost_cap,
                    w.w_c.sqrt(),
                    out,
                );
            }
        }
        let s = w.w_s.sqrt();
        for i in self.n_state_vars()..self.n_vars() {
            out.push(Residual::new(z[i]).with(i, 1.0).scaled(s));
        }
        let lim = &cfg.limits;
        let literal = match lim.butterfly {
            ButterflyMode::Off => return,
            ButterflyMode::Literal => Some(lim.w_max_radps / lim.v_max_mps),
            ButterflyMode::MinSpeedForTurn => None,
        };
        if w.w_butterfly > 0.0 {
            let c = lim.butterfly_ratio();
            for k in 1..=h {
                for r in 0..self.n_robots {
                    let res = costs::butterfly_residual(
                        z,
                        self.layout(k),
                        r,
                        c,
                        literal,
                        lim.v_max_mps,
                        w.w_butterfly.sqrt(),
                    );
                    out.extend(res);
                }
            }
        }
    }

    /// Total weighted cost of a variable vector.
    pub fn cost(&self, z: &[f64]) -> f64 {
        let mut res = Vec::new();
        self.residuals(z, &mut res);
        res.iter().map(|r| r.value * r.value).sum()
    }

    /// `max |x(k+1) − x(k) − f(x(k), u(k))Δt|` and the initial-state residual.
    pub fn dynamics_defect(&self, z: &[f64]) -> f64 {
        let mut vals = DVector::zeros(self.n_eq());
        self.eq_rows(z, &mut vals, None);
        vals.amax()
    }

    /// Raw polygon residuals of every anchor row along the constraint horizon.
    pub fn pip_residuals(&self, z: &[f64]) -> Vec<f64> {
        let mut vals = DVector::zeros(self.n_ineq());
        self.ineq_rows(z, &mut vals, None, false);
        vals.as_slice()[..self.pip_rows()].to_vec()
    }

    /// Largest signed-distance violation of maintained pair `m` at step `k`;
    /// negative when the pair is held with room to spare.
    pub fn pair_violation(&self, z: &[f64], m: usize, k: usize) -> f64 {
        match &self.maintained[m] {
            MaintainedPair::Anchor { anchor, opening, triangle } => {
                let (pa, tha, _) = self.state_at(z, k, anchor.robot);
                let (pb, thb, _) = self.state_at(z, k, opening.robot);
                let q = rotate(-thb, rotate(tha, anchor.offset) + pa - pb);
                (0..3)
                    .map(|e| {
                        let (t0, t1) = (triangle[e], triangle[(e + 1) % 3]);
                        let edge = t1 - t0;
                        Point2::new(edge.y, -edge.x).dot(q - t0) / edge.norm()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            }
            MaintainedPair::Knob { a, b } => {
                let (pa, tha, _) = self.state_at(z, k, a.robot);
                let (pb, thb, _) = self.state_at(z, k, b.robot);
                let d = rotate(tha, a.offset) + pa - rotate(thb, b.offset) - pb;
                let yaw = (tha + a.angle - thb - b.angle).sin().abs() - KNOB_YAW_TOL.sin();
                (d.x.abs().max(d.y.abs()) - self.cfg.epsilon_m).max(yaw)
            }
        }
    }

    fn eq_rows(&self, z: &[f64], vals: &mut DVector<f64>, mut jac: Option<&mut DMatrix<f64>>) {
        let (n, dt) = (self.n_robots, self.cfg.dt_s);
        for (r, s) in self.x0.iter().enumerate() {
            let i = self.state_index(0, r);
            for (c, x0) in s.to_array().iter().enumerate() {
                vals[i + c] = z[i + c] - x0;
                if let Some(j) = jac.as_deref_mut() {
                    j[(i + c, i + c)] = 1.0;
                }
            }
        }
        for k in 0..self.cfg.horizon {
            for r in 0..n {
                let i = self.state_index(k, r);
                let nx = self.state_index(k + 1, r);
                let u = self.control_index(k, r);
                let [px, py, th, v, w] = [z[i], z[i + 1], z[i + 2], z[i + 3], z[i + 4]];
                let (s, c) = th.sin_cos();
                let row = nx;
                vals[row] = z[nx] - px - v * c * dt;
                vals[row + 1] = z[nx + 1] - py - v * s * dt;
                vals[row + 2] = z[nx + 2] - th - w * dt;
                vals[row + 3] = z[nx + 3] - v - z[u] * dt;
                vals[row + 4] = z[nx + 4] - w - z[u + 1] * dt;
                if let Some(j) = jac.as_deref_mut() {
                    for d in 0..SD {
                        j[(row + d, nx + d)] = 1.0;
                        j[(row + d, i + d)] = -1.0;
                    }
                    j[(row, i + 3)] = -c * dt;
                    j[(row, i + 2)] = v * s * dt;
                    j[(row + 1, i + 3)] = -s * dt;
                    j[(row + 1, i + 2)] = -v * c * dt;
                    j[(row + 2, i + 4)] = -dt;
                    j[(row + 3, u)] = -dt;
                    j[(row + 4, u + 1)] = -dt;
                }
            }
        }
    }

    fn state_at(&self, z: &[f64], k: usize, r: usize) -> (Point2, f64, usize) {
        let i = self.state_index(k, r);
        (Point2::new(z[i], z[i + 1]), z[i + 2], i)
    }

    fn ineq_rows(&self, z: &[f64], vals: &mut DVector<f64>, mut jac: Option<&mut DMatrix<f64>>, relaxed: bool) {
        let mut row = 0;
        let hc = self.cfg.constraint_horizon;
        for (m, pair) in self.maintained.iter().enumerate() {
            let MaintainedPair::Anchor { anchor, opening, triangle } = pair else { continue };
            let relax = if relaxed { self.relax[m] } else { 0.0 };
            for k in 1..=hc {
                let (pa, tha, ia) = self.state_at(z, k, anchor.robot);
                let (pb, thb, ib) = self.state_at(z, k, opening.robot);
                let p = rotate(tha, anchor.offset) + pa;
                let dp_dth = rotate_dtheta(tha, anchor.offset);
                let q = rotate(-thb, p - pb);
                for e in 0..3 {
                    let (t0, t1) = (triangle[e], triangle[(e + 1) % 3]);
                    let edge = t1 - t0;
                    let nb = Point2::new(edge.y, -edge.x);
                    vals[row] = nb.dot(q - t0) - relax * edge.norm();
                    if let Some(j) = jac.as_deref_mut() {
                        let nw = rotate(thb, nb);
                        j[(row, ia)] = nw.x;
                        j[(row, ia + 1)] = nw.y;
                        j[(row, ia + 2)] = nw.dot(dp_dth);
                        j[(row, ib)] = -nw.x;
                        j[(row, ib + 1)] = -nw.y;
                        j[(row, ib + 2)] = nb.dot(Point2::new(q.y, -q.x));
                    }
                    row += 1;
                }
            }
        }
        let eps = self.cfg.epsilon_m;
        for (m, pair) in self.maintained.iter().enumerate() {
            let MaintainedPair::Knob { a, b } = pair else { continue };
            let relax = if relaxed { self.relax[m] } else { 0.0 };
            for k in 1..=hc {
                let (pa, tha, ia) = self.state_at(z, k, a.robot);
                let (pb, thb, ib) = self.state_at(z, k, b.robot);
                let d = rotate(tha, a.offset) + pa - rotate(thb, b.offset) - pb;
                let (da, db) = (rotate_dtheta(tha, a.offset), rotate_dtheta(thb, b.offset));
                for sign in [1.0, -1.0] {
                    vals[row] = sign * d.x - eps - relax;
                    vals[row + 1] = sign * d.y - eps - relax;
                    if let Some(j) = jac.as_deref_mut() {
                        j[(row, ia)] = sign;
                        j[(row, ia + 2)] = sign * da.x;
                        j[(row, ib)] = -sign;
                        j[(row, ib + 2)] = -sign * db.x;
                        j[(row + 1, ia + 1)] = sign;
                        j[(row + 1, ia + 2)] = sign * da.y;
                        j[(row + 1, ib + 1)] = -sign;
                        j[(row + 1, ib + 2)] = -sign * db.y;
                    }
                    row += 2;
                }
                let dth = tha + a.angle - thb - b.angle;
                let (s, c) = dth.sin_cos();
                for sign in [1.0, -1.0] {
                    vals[row] = sign * s - KNOB_YAW_TOL.sin() - relax;
                    if let Some(j) = jac.as_deref_mut() {
                        j[(row, ia + 2)] = sign * c;
                        j[(row, ib + 2)] = -sign * c;
                    }
                    row += 1;
                }
            }
        }
        let lim = &self.cfg.limits;
        for k in 1..=self.cfg.horizon {
            for r in 0..self.n_robots {
                let i = self.state_index(k, r);
                for (comp, bound) in [(3, lim.v_max_mps), (4, lim.w_max_radps)] {
                    for sign in [1.0, -1.0] {
                        vals[row] = sign * z[i + comp] - bound;
                        if let Some(j) = jac.as_deref_mut() {
                            j[(row, i + comp)] = sign;
                        }
                        row += 1;
                    }
                }
            }
        }
        for k in 0..self.cfg.horizon {
            for r in 0..self.n_robots {
                let c = self.control_index(k, r);
                let pairs = [
                    (c, 1.0, lim.u_max.v_dot),
                    (c, -1.0, -lim.u_min.v_dot),
                    (c + 1, 1.0, lim.u_max.w_dot),
                    (c + 1, -1.0, -lim.u_min.w_dot),
                ];
                for (idx, sign, bound) in pairs {
                    vals[row] = sign * z[idx] - bound;
                    if let Some(j) = jac.as_deref_mut() {
                        j[(row, idx)] = sign;
                    }
                    row += 1;
                }
            }
        }
        debug_assert_eq!(row, self.n_ineq());
    }
}

impl Nlp for MpcProblem {
    fn num_vars(&self) -> usize {
        self.n_vars()
    }

    fn num_eq(&self) -> usize {
        self.n_eq()
    }

    fn num_ineq(&self) -> usize {
        self.n_ineq()
    }

    fn objective(&self, x: &[f64], derivs: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>) -> f64 {
        let mut res = Vec::new();
        self.residuals(x, &mut res);
        let f = res.iter().map(|r| r.value * r.value).sum();
        if let Some((g, h)) = derivs {
            for r in &res {
                for (i, di) in r.grad() {
                    g[i] += 2.0 * r.value * di;
                    for (j, dj) in r.grad() {
                        h[(i, j)] += 2.0 * di * dj;
                    }
                }
            }
        }
        f
    }

    fn eq(&self, x: &[f64], vals: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) {
        self.eq_rows(x, vals, jac)
    }

    fn ineq(&self, x: &[f64], vals: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) {
        self.ineq_rows(x, vals, jac, true)
    }

    /// Each state row of the dynamics only references earlier steps.
    fn dependent_vars(&self) -> usize {
        self.n_state_vars()
    }
}
