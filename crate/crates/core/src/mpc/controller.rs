//! Receding-horizon loop: build, warm start, solve, apply the first control.

use std::time::Instant;

use crate::dynamics::{ControlInput, RobotState};
use crate::Result;

use super::problem::{build_problem, MpcProblem};
use super::qp::QpError;
use super::sqp::{self, SqpOptions, SqpResult, SqpStatus};
use super::{Behavior, MaintainedPair, MpcConfig};

/// Decay applied to the held command when a solve is rejected.
const FAIL_SAFE_DECAY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub qp_iterations: usize,
    pub kkt: f64,
    pub infeasibility: f64,
    pub objective: f64,
    pub converged: bool,
    pub warm_started: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct MpcOutput {
    /// First-step control per robot.
    pub controls: Vec<ControlInput>,
    /// Predicted states `k = 0..=H`, one row per step.
    pub trajectory: Vec<Vec<RobotState>>,
    pub stats: SolveStats,
    /// The solve was rejected and `controls` hold the decayed previous command.
    pub fail_safe: bool,
    /// Largest raw polygon residual over the constraint horizon.
    pub max_pip_residual: f64,
    pub dynamics_defect: f64,
}

/// Solves `problem` from `start` (or the zero-control rollout).
pub fn solve(problem: &MpcProblem, start: Option<&[f64]>) -> SqpResult {
    let cfg = problem.config();
    let opts = SqpOptions {
        max_iterations: cfg.max_iterations,
        kkt_tol: cfg.kkt_tol,
        feas_tol: cfg.feas_tol,
        ..SqpOptions::default()
    };
    let cold;
    let x0 = match start {
        Some(z) => z,
        None => {
            cold = problem.rollout(&[]);
            &cold
        }
    };
    sqp::solve(problem, x0, &opts)
}

type PairKey = (usize, usize, bool);

fn key(m: &MaintainedPair) -> PairKey {
    let (a, b) = m.robots();
    (a, b, matches!(m, MaintainedPair::Anchor { .. }))
}

#[derive(Debug, Clone)]
struct Entering {
    key: PairKey,
    violation: f64,
    solves: usize,
}

#[derive(Debug, Clone)]
pub struct MpcController {
    cfg: MpcConfig,
    /// Controls of the last accepted plan, shifted one step on use.
    plan: Option<(usize, Vec<ControlInput>)>,
    last: Vec<ControlInput>,
    entering: Vec<Entering>,
    known: Vec<PairKey>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, plan: None, last: Vec::new(), entering: Vec::new(), known: Vec::new() })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.plan = None;
        self.last.clear();
        self.entering.clear();
        self.known.clear();
    }

    fn warm_start(&self, problem: &MpcProblem) -> Option<Vec<f64>> {
        let (n, plan) = self.plan.as_ref()?;
        if *n != problem.n_robots() {
            return None;
        }
        let mut shifted: Vec<ControlInput> = plan.iter().skip(*n).copied().collect();
        shifted.extend(plan.iter().skip(plan.len() - n).copied());
        Some(problem.rollout(&shifted))
    }

    /// Relaxation for pairs whose constraints cannot hold at the start.
    fn soft_start(&mut self, problem: &mut MpcProblem) {
        let zero = problem.rollout(&[]);
        let decay_over = self.cfg.soft_start_solves.max(1) as f64;
        let mut entering = Vec::new();
        let keys: Vec<PairKey> = problem.maintained().iter().map(key).collect();
        for (m, k) in keys.iter().enumerate() {
            let mut scheduled = 0.0;
            if let Some(e) = self.entering.iter().find(|e| e.key == *k) {
                scheduled = e.violation * (1.0 - e.solves as f64 / decay_over);
                if e.solves + 1 < self.cfg.soft_start_solves {
                    entering.push(Entering { solves: e.solves + 1, ..e.clone() });
                }
            } else if !self.known.contains(k) {
                let v = problem.pair_violation(&zero, m, 0);
                if v > 0.0 {
                    scheduled = v;
                    if self.cfg.soft_start_solves > 1 {
                        entering.push(Entering { key: *k, violation: v, solves: 1 });
                    }
                }
            }
            // The first predicted step does not depend on the controls, so
            // whatever it violates has to be granted.
            let forced = problem.pair_violation(&zero, m, 1);
            let need = if forced > 0.0 { forced * 1.01 + 1e-9 } else { 0.0 };
            problem.set_relax(m, scheduled.max(need));
        }
        self.entering = entering;
        self.known = keys;
    }

    /// One planning step.
    pub fn step(
        &mut self,
        states: &[RobotState],
        behavior: &Behavior,
        maintained: &[MaintainedPair],
    ) -> Result<MpcOutput> {
        let started = Instant::now();
        let mut problem = build_problem(states, behavior, maintained, &self.cfg)?;
        self.soft_start(&mut problem);
        let warm = self.warm_start(&problem);
        let warm_started = warm.is_some();
        let mut result = solve(&problem, warm.as_deref());
        if result.qp_error == Some(QpError::Infeasible) && !maintained.is_empty() {
            for m in 0..maintained.len() {
                let r = problem.relax()[m] + self.cfg.epsilon_m;
                problem.set_relax(m, r);
            }
            result = solve(&problem, None);
        }
        let converged = result.status == SqpStatus::Converged;
        let stats = SolveStats {
            iterations: result.iterations,
            qp_iterations: result.qp_iterations,
            kkt: result.kkt,
            infeasibility: result.infeasibility,
            objective: result.objective,
            converged,
            warm_started,
            wall_time_s: started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        };
        let n = problem.n_robots();
        let trajectory = problem.trajectory(&result.x);
        let max_pip_residual = problem.pip_residuals(&result.x).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let dynamics_defect = problem.dynamics_defect(&result.x);
        let controls = if converged {
            let plan = problem.controls(&result.x);
            let first = plan[..n].to_vec();
            self.plan = Some((n, plan));
            first
        } else {
            self.plan = None;
            let held = if self.last.len() == n { self.last.clone() } else { vec![ControlInput::zero(); n] };
            held.iter().map(|u| u.scaled(FAIL_SAFE_DECAY)).collect()
        };
        self.last = controls.clone();
        Ok(MpcOutput {
            controls,
            trajectory,
            stats,
            fail_safe: !converged,
            max_pip_residual,
            dynamics_defect,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, RobotFootprint};
    use crate::mpc::ConnectionPoint;

    fn coupled() -> (Vec<RobotState>, MaintainedPair) {
        let fp = RobotFootprint::default();
        let spacing = fp.opening_point.x - fp.anchor_point.x;
        let pair = MaintainedPair::Anchor {
            anchor: ConnectionPoint::new(0, fp.anchor_point),
            opening: ConnectionPoint::new(1, fp.opening_point),
            triangle: [Point2::default(), fp.front_right(), fp.front_left()],
        };
        (vec![RobotState::new(spacing, 0.0, 0.0, 0.0, 0.0), RobotState::default()], pair)
    }

    #[test]
    fn goto_ahead_accelerates() {
        let mut c = MpcController::new(MpcConfig::default()).unwrap();
        let out = c
            .step(&[RobotState::default()], &Behavior::Goto(vec![Some(Point2::new(0.5, 0.0))]), &[])
            .unwrap();
        assert!(out.stats.converged, "{:?}", out.stats);
        assert!(out.controls[0].v_dot > 0.0);
        assert!(out.stats.wall_time_s > 0.0);
    }

    #[test]
    fn zero_velocity_target_gives_zero_controls() {
        let mut c = MpcController::new(MpcConfig::default()).unwrap();
        let out = c.step(&[RobotState::default()], &Behavior::Velocity(vec![(0.0, 0.0)]), &[]).unwrap();
        assert!(out.stats.converged);
        assert!(out.controls[0].v_dot.abs() < 1e-9 && out.controls[0].w_dot.abs() < 1e-9);
    }

    #[test]
    fn smoothness_only_gives_zero_input() {
        let mut cfg = MpcConfig::default();
        cfg.weights = crate::mpc::CostWeights {
            w_p: [0.0; 2],
            w_theta: 0.0,
            w_g: [0.0; 2],
            w_v: [0.0; 2],
            w_f: 0.0,
            w_m: 0.0,
            w_c: 0.0,
            w_s: 0.01,
            w_butterfly: 0.0,
        };
        let mut c = MpcController::new(cfg).unwrap();
        let s = RobotState::new(0.0, 0.0, 0.2, 0.02, 0.1);
        let out = c.step(&[s], &Behavior::Goto(vec![Some(Point2::new(1.0, 1.0))]), &[]).unwrap();
        assert!(out.stats.converged);
        assert!(out.controls[0].v_dot.abs() < 1e-9 && out.controls[0].w_dot.abs() < 1e-9);
    }

    #[test]
    fn coupled_pair_stays_inside_while_driving() {
        let (states, pair) = coupled();
        let mut c = MpcController::new(MpcConfig::default()).unwrap();
        let out = c.step(&states, &Behavior::Velocity(vec![(0.03, 0.0); 2]), &[pair]).unwrap();
        assert!(out.stats.converged, "{:?}", out.stats);
        assert!(out.max_pip_residual <= 1e-6);
        assert!(out.dynamics_defect <= 1e-6);
    }

    #[test]
    fn solution_beats_zero_control() {
        let (states, pair) = coupled();
        let cfg = MpcConfig::default();
        let p = build_problem(&states, &Behavior::Velocity(vec![(0.03, 0.1); 2]), &[pair], &cfg).unwrap();
        let r = solve(&p, None);
        assert!(r.converged());
        assert!(p.cost(&r.x) <= p.cost(&p.rollout(&[])));
    }

    #[test]
    fn same_start_same_answer() {
        let (states, pair) = coupled();
        let p = build_problem(&states, &Behavior::Velocity(vec![(0.03, 0.1); 2]), &[pair], &MpcConfig::default())
            .unwrap();
        let z = p.rollout(&[ControlInput::new(0.01, 0.2); 10]);
        let (a, b) = (solve(&p, Some(&z)), solve(&p, Some(&z)));
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn fail_safe_decays_previous_command() {
        let mut cfg = MpcConfig::default();
        cfg.max_iterations = 1;
        cfg.kkt_tol = 1e-300;
        let mut c = MpcController::new(cfg).unwrap();
        c.last = vec![ControlInput::new(0.1, 1.0)];
        let out = c.step(&[RobotState::default()], &Behavior::Goto(vec![Some(Point2::new(0.5, 0.0))]), &[]).unwrap();
        assert!(out.fail_safe);
        assert_eq!(out.controls[0], ControlInput::new(0.05, 0.5));
    }
}
