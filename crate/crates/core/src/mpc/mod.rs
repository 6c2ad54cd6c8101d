//! Centralized receding-horizon controller.
//!
//! The plan over `H_m` steps is transcribed with states and controls as
//! decision variables tied by Euler dynamics equalities. Coupled pairs are
//! kept together by requiring each anchor point to stay inside the partner's
//! opening triangle for the first `H_c` steps; the resulting nonlinear
//! program is solved by SQP with a dense active-set QP.

pub mod controller;
pub mod costs;
pub mod problem;
pub mod qp;
pub mod sqp;

use serde::{Deserialize, Serialize};

use crate::dynamics::ActuationLimits;
use crate::geometry::{Point2, DEFAULT_ANGLE_COST_CAP};
use crate::{Error, Result};

pub use controller::{MpcController, MpcOutput, SolveStats};
pub use costs::{
    cost_connection, cost_connection_gradient, cost_goal, cost_goal_gradient, cost_velocity,
    cost_velocity_gradient,
};
pub use problem::{build_problem, MpcProblem};

/// A frame rigidly attached to a robot body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionPoint {
    pub robot: usize,
    pub offset: Point2,
    #[serde(default)]
    pub angle: f64,
}

impl ConnectionPoint {
    pub fn new(robot: usize, offset: Point2) -> Self {
        Self { robot, offset, angle: 0.0 }
    }
}

/// Two connection points that should coincide.
pub type AlignPair = (ConnectionPoint, ConnectionPoint);

/// What the swarm is asked to do during one solve.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    /// Drive each pair's connection points together.
    Connect(Vec<AlignPair>),
    /// Per-robot position goals; `None` leaves a robot free.
    Goto(Vec<Option<Point2>>),
    /// Per-robot `(v*, w*)` targets.
    Velocity(Vec<(f64, f64)>),
}

/// A pair that is already coupled and must stay so.
#[derive(Debug, Clone, PartialEq)]
pub enum MaintainedPair {
    /// `anchor` must stay inside the body-frame `triangle` of `opening.robot`.
    Anchor {
        anchor: ConnectionPoint,
        opening: ConnectionPoint,
        triangle: [Point2; 3],
    },
    /// Side connection held as a near-rigid relative pose.
    Knob { a: ConnectionPoint, b: ConnectionPoint },
}

impl MaintainedPair {
    pub fn points(&self) -> AlignPair {
        match self {
            MaintainedPair::Anchor { anchor, opening, .. } => (*anchor, *opening),
            MaintainedPair::Knob { a, b } => (*a, *b),
        }
    }

    pub fn robots(&self) -> (usize, usize) {
        let (a, b) = self.points();
        (a.robot, b.robot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub w_p: [f64; 2],
    pub w_theta: f64,
    pub w_g: [f64; 2],
    /// Diagonal over each robot's `(v, w)` residual.
    pub w_v: [f64; 2],
    pub w_f: f64,
    pub w_m: f64,
    pub w_c: f64,
    pub w_s: f64,
    /// Penalty on leaving the butterfly velocity set.
    pub w_butterfly: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_p: [1.0, 1.0],
            w_theta: 0.1,
            w_g: [1.0, 1.0],
            w_v: [1.0, 1.0],
            w_f: 10.0,
            w_m: 1.0,
            w_c: 0.1,
            w_s: 0.01,
            w_butterfly: 1.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_p[0],
            self.w_p[1],
            self.w_theta,
            self.w_g[0],
            self.w_g[1],
            self.w_v[0],
            self.w_v[1],
            self.w_f,
            self.w_m,
            self.w_c,
            self.w_s,
            self.w_butterfly,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidMpcConfig("weights must be finite and nonnegative".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub constraint_horizon: usize,
    pub dt_s: f64,
    pub weights: CostWeights,
    pub limits: ActuationLimits,
    /// Infinity-norm bound on the Lagrangian gradient at convergence.
    pub kkt_tol: f64,
    /// Constraint violation accepted at convergence.
    pub feas_tol: f64,
    pub max_iterations: usize,
    pub epsilon_m: f64,
    pub angle_cost_cap: f64,
    /// Solves over which an entering pair's initial violation is relaxed.
    pub soft_start_solves: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            constraint_horizon: 3,
            dt_s: 0.1,
            weights: CostWeights::default(),
            limits: ActuationLimits::default(),
            kkt_tol: 1e-6,
            feas_tol: 1e-8,
            max_iterations: 50,
            epsilon_m: 0.003,
            angle_cost_cap: DEFAULT_ANGLE_COST_CAP,
            soft_start_solves: 5,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidMpcConfig(m.into()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.constraint_horizon == 0 || self.constraint_horizon > self.horizon {
            return bad("constraint_horizon must lie in 1..=horizon");
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return bad("dt_s must be positive");
        }
        if !(self.kkt_tol > 0.0 && self.feas_tol > 0.0) || self.max_iterations == 0 {
            return bad("solver tolerances and iteration limit must be positive");
        }
        if !(self.epsilon_m >= 0.0) || !(self.angle_cost_cap > 0.0) {
            return bad("epsilon_m must be nonnegative and angle_cost_cap positive");
        }
        self.weights.validate()?;
        self.limits.validate().map_err(Error::InvalidMpcConfig)
    }
}
