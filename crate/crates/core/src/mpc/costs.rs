//! Behavior costs in least-squares form.
//!
//! Every term is a sum of squared scalar residuals, each depending on at
//! most six variables. The same residuals give the cost, its gradient and a
//! Gauss-Newton Hessian for the solver.

use crate::dynamics::RobotState;
use crate::geometry::{rotate, rotate_dtheta, wrap_angle_residual, wrap_angle_residual_derivative, Point2};

use super::{AlignPair, CostWeights};

const MAX_DEPS: usize = 6;

/// A scalar residual with its sparse gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Residual {
    pub value: f64,
    len: usize,
    idx: [usize; MAX_DEPS],
    d: [f64; MAX_DEPS],
}

impl Residual {
    pub fn new(value: f64) -> Self {
        Self { value, len: 0, idx: [0; MAX_DEPS], d: [0.0; MAX_DEPS] }
    }

    pub fn with(mut self, i: usize, d: f64) -> Self {
        self.idx[self.len] = i;
        self.d[self.len] = d;
        self.len += 1;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.value *= s;
        for d in &mut self.d[..self.len] {
            *d *= s;
        }
        self
    }

    pub fn grad(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.len].iter().copied().zip(self.d[..self.len].iter().copied())
    }
}

/// Offsets of robot `r`'s state components inside a stacked variable vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StateLayout {
    pub base: usize,
}

impl StateLayout {
    pub fn at(self, robot: usize, comp: usize) -> usize {
        self.base + robot * RobotState::DIM + comp
    }
}

const PX: usize = 0;
const PY: usize = 1;
const TH: usize = 2;
const V: usize = 3;
const W: usize = 4;

fn get(x: &[f64], l: StateLayout, r: usize, c: usize) -> f64 {
    x[l.at(r, c)]
}

/// World position of a connection point and its derivative in heading.
fn world_point(x: &[f64], l: StateLayout, robot: usize, offset: Point2) -> (Point2, Point2) {
    let th = get(x, l, robot, TH);
    let p = rotate(th, offset) + Point2::new(get(x, l, robot, PX), get(x, l, robot, PY));
    (p, rotate_dtheta(th, offset))
}

pub(crate) fn connection_residuals(
    x: &[f64],
    l: StateLayout,
    pairs: &[AlignPair],
    w: &CostWeights,
    cap: f64,
    scale: f64,
    out: &mut Vec<Residual>,
) {
    let (sx, sy, sth) = (w.w_p[0].sqrt(), w.w_p[1].sqrt(), w.w_theta.sqrt());
    for (ci, cj) in pairs {
        let (pi, dpi) = world_point(x, l, ci.robot, ci.offset);
        let (pj, dpj) = world_point(x, l, cj.robot, cj.offset);
        let dp = pi - pj;
        let (ti, tj) = (l.at(ci.robot, TH), l.at(cj.robot, TH));
        out.push(
            Residual::new(dp.x)
                .with(l.at(ci.robot, PX), 1.0)
                .with(ti, dpi.x)
                .with(l.at(cj.robot, PX), -1.0)
                .with(tj, -dpj.x)
                .scaled(scale * sx),
        );
        out.push(
            Residual::new(dp.y)
                .with(l.at(ci.robot, PY), 1.0)
                .with(ti, dpi.y)
                .with(l.at(cj.robot, PY), -1.0)
                .with(tj, -dpj.y)
                .scaled(scale * sy),
        );
        let dth = x[ti] + ci.angle - x[tj] - cj.angle;
        let dr = wrap_angle_residual_derivative(dth, cap);
        out.push(
            Residual::new(wrap_angle_residual(dth, cap))
                .with(ti, dr)
                .with(tj, -dr)
                .scaled(scale * sth),
        );
    }
}

pub(crate) fn goal_residuals(
    x: &[f64],
    l: StateLayout,
    goals: &[Option<Point2>],
    w: &CostWeights,
    scale: f64,
    out: &mut Vec<Residual>,
) {
    let (sx, sy) = (w.w_g[0].sqrt() * scale, w.w_g[1].sqrt() * scale);
    for (r, g) in goals.iter().enumerate() {
        let Some(g) = g else { continue };
        out.push(Residual::new(get(x, l, r, PX) - g.x).with(l.at(r, PX), 1.0).scaled(sx));
        out.push(Residual::new(get(x, l, r, PY) - g.y).with(l.at(r, PY), 1.0).scaled(sy));
    }
}

pub(crate) fn velocity_residuals(
    x: &[f64],
    l: StateLayout,
    targets: &[(f64, f64)],
    w: &CostWeights,
    scale: f64,
    out: &mut Vec<Residual>,
) {
    let (sv, sw) = (w.w_v[0].sqrt() * scale, w.w_v[1].sqrt() * scale);
    for (r, &(v, om)) in targets.iter().enumerate() {
        out.push(Residual::new(get(x, l, r, V) - v).with(l.at(r, V), 1.0).scaled(sv));
        out.push(Residual::new(get(x, l, r, W) - om).with(l.at(r, W), 1.0).scaled(sw));
    }
}

/// Penalty residual for leaving the butterfly set, normalized by `v_max²`.
///
/// `c > 0` asks for `v² >= c²w²`; `literal = Some(k)` asks for `v <= k|w|`
/// written as `v|v| <= k²w²`.
pub(crate) fn butterfly_residual(
    x: &[f64],
    l: StateLayout,
    r: usize,
    c: f64,
    literal: Option<f64>,
    v_max: f64,
    scale: f64,
) -> Option<Residual> {
    let (v, w) = (get(x, l, r, V), get(x, l, r, W));
    let inv = 1.0 / (v_max * v_max);
    let (g, dv, dw) = match literal {
        None => (c * c * w * w - v * v, -2.0 * v, 2.0 * c * c * w),
        Some(k) => (v * v.abs() - k * k * w * w, 2.0 * v.abs(), -2.0 * k * k * w),
    };
    if g <= 0.0 {
        return None;
    }
    Some(
        Residual::new(g * inv)
            .with(l.at(r, V), dv * inv)
            .with(l.at(r, W), dw * inv)
            .scaled(scale),
    )
}

fn flatten(states: &[RobotState]) -> Vec<f64> {
    states.iter().flat_map(|s| s.to_array()).collect()
}

fn sum_squares(res: &[Residual]) -> f64 {
    res.iter().map(|r| r.value * r.value).sum()
}

fn gradient_of(res: &[Residual], n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n];
    for r in res {
        for (i, d) in r.grad() {
            g[i] += 2.0 * r.value * d;
        }
    }
    g
}

fn connection_set(states: &[RobotState], pairs: &[AlignPair], w: &CostWeights) -> Vec<Residual> {
    let mut out = Vec::new();
    let x = flatten(states);
    connection_residuals(&x, StateLayout { base: 0 }, pairs, w, crate::geometry::DEFAULT_ANGLE_COST_CAP, 1.0, &mut out);
    out
}

/// `Σ Δpᵀ W_p Δp + W_θ tan²(Δθ/2)` over the pairs.
pub fn cost_connection(states: &[RobotState], pairs: &[AlignPair], w: &CostWeights) -> f64 {
    sum_squares(&connection_set(states, pairs, w))
}

/// Gradient of [`cost_connection`] in the stacked states `[px, py, θ, v, w]`.
pub fn cost_connection_gradient(states: &[RobotState], pairs: &[AlignPair], w: &CostWeights) -> Vec<f64> {
    gradient_of(&connection_set(states, pairs, w), states.len() * RobotState::DIM)
}

fn goal_set(states: &[RobotState], goals: &[Option<Point2>], w: &CostWeights) -> Vec<Residual> {
    let mut out = Vec::new();
    goal_residuals(&flatten(states), StateLayout { base: 0 }, goals, w, 1.0, &mut out);
    out
}

/// `Σ (p_i − g_i)ᵀ W_g (p_i − g_i)` over robots with a goal.
pub fn cost_goal(states: &[RobotState], goals: &[Option<Point2>], w: &CostWeights) -> f64 {
    sum_squares(&goal_set(states, goals, w))
}

pub fn cost_goal_gradient(states: &[RobotState], goals: &[Option<Point2>], w: &CostWeights) -> Vec<f64> {
    gradient_of(&goal_set(states, goals, w), states.len() * RobotState::DIM)
}

fn velocity_set(states: &[RobotState], targets: &[(f64, f64)], w: &CostWeights) -> Vec<Residual> {
    let mut out = Vec::new();
    velocity_residuals(&flatten(states), StateLayout { base: 0 }, targets, w, 1.0, &mut out);
    out
}

/// Quadratic form of the `(v − v*, w − w*)` residuals.
pub fn cost_velocity(states: &[RobotState], targets: &[(f64, f64)], w: &CostWeights) -> f64 {
    sum_squares(&velocity_set(states, targets, w))
}

pub fn cost_velocity_gradient(states: &[RobotState], targets: &[(f64, f64)], w: &CostWeights) -> Vec<f64> {
    gradient_of(&velocity_set(states, targets, w), states.len() * RobotState::DIM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::ConnectionPoint;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unit_weights() -> CostWeights {
        CostWeights { w_theta: 1.0, ..CostWeights::default() }
    }

    #[test]
    fn aligned_pair_costs_nothing() {
        let a = RobotState::new(0.0, 0.0, 0.3, 0.0, 0.0);
        let b = RobotState::new(0.0, 0.0, 0.3, 0.0, 0.0);
        let pair = (ConnectionPoint::new(0, Point2::new(0.1, 0.0)), ConnectionPoint::new(1, Point2::new(0.1, 0.0)));
        assert_abs_diff_eq!(cost_connection(&[a, b], &[pair], &unit_weights()), 0.0);
    }

    #[test]
    fn connection_quadratic_form() {
        let a = RobotState::new(0.01, 0.0, 0.0, 0.0, 0.0);
        let b = RobotState::default();
        let pair = (ConnectionPoint::new(0, Point2::default()), ConnectionPoint::new(1, Point2::default()));
        assert_abs_diff_eq!(cost_connection(&[a, b], &[pair], &unit_weights()), 1e-4, epsilon = 1e-15);
    }

    #[test]
    fn connection_periodic_in_heading() {
        let pair = (ConnectionPoint::new(0, Point2::new(-0.03, 0.0)), ConnectionPoint::new(1, Point2::new(0.02, 0.0)));
        let a = RobotState { px: 0.01, py: 0.02, theta: 0.4, v: 0.0, w: 0.0 };
        let b = RobotState { px: -0.05, py: 0.0, theta: -0.2, v: 0.0, w: 0.0 };
        let shifted = RobotState { theta: a.theta + 2.0 * PI, ..a };
        let w = unit_weights();
        assert_abs_diff_eq!(cost_connection(&[a, b], &[pair], &w), cost_connection(&[shifted, b], &[pair], &w), epsilon = 1e-12);
    }

    #[test]
    fn goal_examples() {
        let w = CostWeights { w_g: [2.0, 2.0], ..CostWeights::default() };
        let at = RobotState::new(1.0, 2.0, 0.0, 0.0, 0.0);
        assert_eq!(cost_goal(&[at], &[Some(Point2::new(1.0, 2.0))], &w), 0.0);
        let off = RobotState::new(1.0, 0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(cost_goal(&[off], &[Some(Point2::default())], &w), 2.0, epsilon = 1e-12);
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let s = RobotState::new(1.0 - 0.1 * i as f64, 0.0, 0.0, 0.0, 0.0);
            let c = cost_goal(&[s], &[Some(Point2::default())], &w);
            assert!(c < last || i == 10 && c == 0.0);
            last = c;
        }
    }

    #[test]
    fn velocity_examples() {
        let w = CostWeights::default();
        let s = RobotState::new(0.0, 0.0, 0.0, 0.1, 0.2);
        assert_eq!(cost_velocity(&[s], &[(0.1, 0.2)], &w), 0.0);
        assert_abs_diff_eq!(cost_velocity(&[s], &[(0.0, 0.2)], &w), 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(cost_velocity(&[s], &[(0.2, 0.2)], &w), 0.01, epsilon = 1e-15);
    }
}
