//! Unicycle model with acceleration inputs, its integrators, the feasible
//! actuation sets and the open-loop wiggle command.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Point2, Pose2};

/// `[px, py, θ, v, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub v: f64,
    pub w: f64,
}

impl RobotState {
    pub const DIM: usize = 5;

    pub fn new(px: f64, py: f64, theta: f64, v: f64, w: f64) -> Self {
        Self {
            px,
            py,
            theta: normalize_angle(theta),
            v,
            w,
        }
    }

    pub fn at_rest(pose: Pose2) -> Self {
        Self::new(pose.position.x, pose.position.y, pose.heading, 0.0, 0.0)
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.px, self.py, self.theta)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.px, self.py)
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.px, self.py, self.theta, self.v, self.w]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// `[v̇, ẇ]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v_dot: f64,
    pub w_dot: f64,
}

impl ControlInput {
    pub const DIM: usize = 2;

    pub const fn new(v_dot: f64, w_dot: f64) -> Self {
        Self { v_dot, w_dot }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.v_dot * s, self.w_dot * s)
    }
}

/// Which velocity set is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ButterflyMode {
    /// `|v| >= c·|w|`: turning needs forward speed.
    #[default]
    MinSpeedForTurn,
    /// The literal set `v <= (w_max / v_max)·|w|`, kept for comparison.
    Literal,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuationLimits {
    pub u_min: ControlInput,
    pub u_max: ControlInput,
    pub v_max_mps: f64,
    pub w_max_radps: f64,
    /// Fraction of `v_max / w_max` used as the butterfly slope `c`.
    pub v_min_ratio: f64,
    #[serde(default)]
    pub butterfly: ButterflyMode,
}

impl Default for ActuationLimits {
    fn default() -> Self {
        Self {
            u_min: ControlInput::new(-0.2, -4.0),
            u_max: ControlInput::new(0.2, 4.0),
            v_max_mps: 0.05,
            w_max_radps: 2.0,
            v_min_ratio: 0.25,
            butterfly: ButterflyMode::MinSpeedForTurn,
        }
    }
}

impl ActuationLimits {
    /// Butterfly slope `c` in (m/s)/(rad/s).
    pub fn butterfly_ratio(&self) -> f64 {
        self.v_min_ratio * self.v_max_mps / self.w_max_radps
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.u_min.v_dot <= self.u_max.v_dot && self.u_min.w_dot <= self.u_max.w_dot) {
            return Err("u_min must not exceed u_max".into());
        }
        if !(self.v_max_mps > 0.0 && self.w_max_radps > 0.0) {
            return Err("v_max_mps and w_max_radps must be positive".into());
        }
        if !(self.v_min_ratio >= 0.0) {
            return Err("v_min_ratio must be nonnegative".into());
        }
        Ok(())
    }

    pub fn clamp_control(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.v_dot.clamp(self.u_min.v_dot, self.u_max.v_dot),
            u.w_dot.clamp(self.u_min.w_dot, self.u_max.w_dot),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WiggleParams {
    pub v_bias_mps: f64,
    pub w_max_radps: f64,
    /// Angular frequency `B`; the period is `2π / B`.
    pub frequency_radps: f64,
}

impl Default for WiggleParams {
    fn default() -> Self {
        Self {
            v_bias_mps: 0.03,
            w_max_radps: 1.2,
            frequency_radps: 2.0 * std::f64::consts::PI,
        }
    }
}

/// `ẋ = [v cosθ, v sinθ, w, v̇, ẇ]`.
pub fn derivative(x: &RobotState, u: &ControlInput) -> [f64; 5] {
    let (s, c) = x.theta.sin_cos();
    [x.v * c, x.v * s, x.w, u.v_dot, u.w_dot]
}

fn advance(x: &RobotState, k: &[f64; 5], dt: f64) -> RobotState {
    RobotState {
        px: x.px + k[0] * dt,
        py: x.py + k[1] * dt,
        theta: x.theta + k[2] * dt,
        v: x.v + k[3] * dt,
        w: x.w + k[4] * dt,
    }
}

pub fn euler_step(x: &RobotState, u: &ControlInput, dt: f64) -> RobotState {
    let mut next = advance(x, &derivative(x, u), dt);
    next.theta = normalize_angle(next.theta);
    next
}

/// Classic fourth-order Runge-Kutta with `u` held over the step.
pub fn rk4_step(x: &RobotState, u: &ControlInput, dt: f64) -> RobotState {
    let k1 = derivative(x, u);
    let k2 = derivative(&advance(x, &k1, 0.5 * dt), u);
    let k3 = derivative(&advance(x, &k2, 0.5 * dt), u);
    let k4 = derivative(&advance(x, &k3, dt), u);
    let mut k = [0.0; 5];
    for i in 0..5 {
        k[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let mut next = advance(x, &k, dt);
    next.theta = normalize_angle(next.theta);
    next
}

/// Velocity-set membership of a state.
pub fn state_feasible(x: &RobotState, limits: &ActuationLimits) -> bool {
    if x.v.abs() > limits.v_max_mps || x.w.abs() > limits.w_max_radps {
        return false;
    }
    match limits.butterfly {
        ButterflyMode::MinSpeedForTurn => x.v.abs() >= limits.butterfly_ratio() * x.w.abs(),
        ButterflyMode::Literal => x.v <= (limits.w_max_radps / limits.v_max_mps) * x.w.abs(),
        ButterflyMode::Off => true,
    }
}

/// Open-loop decoupling command `(v_bias, w_max·sin(B·t))`.
pub fn wiggle_command(t: f64, p: &WiggleParams) -> (f64, f64) {
    (p.v_bias_mps, p.w_max_radps * (p.frequency_radps * t).sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn derivative_examples() {
        let d = derivative(&RobotState::new(0.0, 0.0, 0.0, 1.0, 0.0), &ControlInput::zero());
        assert_eq!(d, [1.0, 0.0, 0.0, 0.0, 0.0]);
        let d = derivative(&RobotState::new(0.0, 0.0, FRAC_PI_2, 1.0, 0.0), &ControlInput::zero());
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-16);
        assert_eq!(&d[1..], &[1.0, 0.0, 0.0, 0.0]);
        let d = derivative(&RobotState::new(0.0, 0.0, 0.0, 0.0, 0.5), &ControlInput::new(0.1, -0.2));
        assert_eq!(d, [0.0, 0.0, 0.5, 0.1, -0.2]);
    }

    #[test]
    fn euler_examples() {
        let x = euler_step(&RobotState::new(0.0, 0.0, 0.0, 1.0, 0.0), &ControlInput::zero(), 0.1);
        assert_eq!(x, RobotState::new(0.1, 0.0, 0.0, 1.0, 0.0));
        let z = RobotState::default();
        assert_eq!(euler_step(&z, &ControlInput::zero(), 0.1), z);
    }

    #[test]
    fn rk4_examples() {
        let z = RobotState::default();
        assert_eq!(rk4_step(&z, &ControlInput::zero(), 0.1), z);
        let x = rk4_step(&RobotState::new(0.0, 0.0, 0.0, 0.0, 1.0), &ControlInput::zero(), 0.1);
        assert_eq!(x.theta, 0.1);
    }

    #[test]
    fn rk4_tracks_circular_arc() {
        // Closed form for constant (v, w) from the origin heading +x:
        // p(t) = (v/w)(sin wt, 1 - cos wt).
        let (v, w, dt) = (0.08, 0.7, 0.01);
        let mut x = RobotState::new(0.0, 0.0, 0.0, v, w);
        let steps = (2.0 * PI / w / dt).round() as usize;
        let r = v / w;
        for i in 1..=steps {
            x = rk4_step(&x, &ControlInput::zero(), dt);
            let t = i as f64 * dt;
            assert_abs_diff_eq!(x.px, r * (w * t).sin(), epsilon = 1e-8);
            assert_abs_diff_eq!(x.py, r * (1.0 - (w * t).cos()), epsilon = 1e-8);
            let radius = Point2::new(x.px, x.py - r).norm();
            assert_abs_diff_eq!(radius, r, epsilon = 1e-6);
        }
    }

    #[test]
    fn euler_close_to_rk4_at_low_speed() {
        let mut e = RobotState::new(0.0, 0.0, 0.3, 0.1, 0.15);
        let mut r = e;
        let u = ControlInput::zero();
        for _ in 0..10 {
            e = euler_step(&e, &u, 0.1);
            r = rk4_step(&r, &u, 0.1);
        }
        assert!(e.position().dist(r.position()) < 1e-3);
    }

    #[test]
    fn feasibility_examples() {
        let lim = ActuationLimits::default();
        let c = lim.butterfly_ratio();
        assert!(state_feasible(&RobotState::default(), &lim));
        assert!(!state_feasible(&RobotState::new(0.0, 0.0, 0.0, 0.0, lim.w_max_radps), &lim));
        assert!(state_feasible(
            &RobotState::new(0.0, 0.0, 0.0, c * lim.w_max_radps, lim.w_max_radps),
            &lim
        ));
        assert!(state_feasible(&RobotState::new(0.0, 0.0, 0.0, lim.v_max_mps, 0.0), &lim));
        let literal = ActuationLimits { butterfly: ButterflyMode::Literal, ..lim.clone() };
        // The literal set forbids straight-line forward motion.
        assert!(!state_feasible(&RobotState::new(0.0, 0.0, 0.0, 0.01, 0.0), &literal));
    }

    #[test]
    fn wiggle_examples() {
        let p = WiggleParams { v_bias_mps: 0.02, w_max_radps: 1.5, frequency_radps: 3.0 };
        assert_eq!(wiggle_command(0.0, &p), (0.02, 0.0));
        let (_, w) = wiggle_command(FRAC_PI_2 / 3.0, &p);
        assert_abs_diff_eq!(w, 1.5, epsilon = 1e-12);
        let period = 2.0 * PI / 3.0;
        for t in [0.1, 0.7, 1.3] {
            let (a, b) = (wiggle_command(t, &p), wiggle_command(t + period, &p));
            assert_eq!(a.0, b.0);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn euler_exact_on_velocity_subsystem(
            v in -0.1..0.1f64, w in -2.0..2.0f64,
            a in -1.0..1.0f64, b in -1.0..1.0f64, dt in 0.001..0.5f64
        ) {
            let x = RobotState::new(0.0, 0.0, 0.0, v, w);
            let u = ControlInput::new(a, b);
            let e = euler_step(&x, &u, dt);
            let r = rk4_step(&x, &u, dt);
            prop_assert!((e.v - (v + a * dt)).abs() < 1e-14 && (e.w - (w + b * dt)).abs() < 1e-14);
            prop_assert!((e.v - r.v).abs() < 1e-14 && (e.w - r.w).abs() < 1e-14);
        }

        #[test]
        fn feasible_set_symmetric(v in -0.1..0.1f64, w in -3.0..3.0f64) {
            let lim = ActuationLimits::default();
            let a = state_feasible(&RobotState::new(0.0, 0.0, 0.0, v, w), &lim);
            let b = state_feasible(&RobotState::new(0.0, 0.0, 0.0, -v, -w), &lim);
            prop_assert_eq!(a, b);
        }
    }
}
