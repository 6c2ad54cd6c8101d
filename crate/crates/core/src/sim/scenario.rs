//! Scheduled runs of a single world with a per-step log.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coordination::{Aligner, PairKind, PairRegistry};
use crate::dynamics::{wiggle_command, ControlInput};
use crate::geometry::Point2;
use crate::mpc::{Behavior, MpcController, MpcOutput};
use crate::Result;

use super::config::{PhaseSpec, ScenarioConfig};
use super::experiments::trial_rng;
use super::world::{step_world, track_velocity, ContactPhase, RobotBody, SimEvent, World};

/// One robot at one planning instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t_s: f64,
    pub phase: String,
    pub robot: usize,
    pub px_m: f64,
    pub py_m: f64,
    pub theta_rad: f64,
    pub v_mps: f64,
    pub w_radps: f64,
    pub v_dot_mps2: f64,
    pub w_dot_radps2: f64,
    /// Open-loop velocity command, during wiggle phases.
    pub cmd_v_mps: Option<f64>,
    pub cmd_w_radps: Option<f64>,
    /// `i-j:status` for every goal pair, `;`-separated.
    pub pair_statuses: String,
    /// `anchor>opening:phase` for every non-free contact.
    pub contacts: String,
    pub solver_iterations: Option<usize>,
    pub converged: Option<bool>,
    pub fail_safe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// The planner kept rejecting solves; the run was stopped.
    FailSafe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub kind: String,
    pub start_s: f64,
    pub end_s: f64,
    pub ended_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub robots: (usize, usize),
    pub status: String,
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solves: usize,
    pub fail_safe: usize,
    pub mean_iterations: f64,
    pub median_ms: f64,
    pub max_ms: f64,
    /// Largest raw polygon residual of maintained pairs over accepted solves.
    pub max_maintained_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub config_hash: String,
    pub seed: u64,
    pub termination: Termination,
    pub duration_s: f64,
    pub coupled_at_s: Option<f64>,
    pub phases: Vec<PhaseReport>,
    pub pairs: Vec<PairReport>,
    pub contacts: Vec<(usize, usize, ContactPhase)>,
    pub events: Vec<SimEvent>,
    pub solver: SolverReport,
}

#[derive(Debug, Clone)]
pub struct ScenarioLog {
    pub rows: Vec<LogRow>,
    pub summary: ScenarioSummary,
}

fn pair_statuses(reg: Option<&PairRegistry>) -> String {
    reg.map(|r| {
        r.pairs
            .iter()
            .map(|p| {
                let (a, b) = p.robots();
                format!("{a}-{b}:{}", p.status.as_str())
            })
            .collect::<Vec<_>>()
            .join(";")
    })
    .unwrap_or_default()
}

fn contacts(world: &World) -> String {
    world
        .contacts
        .iter()
        .map(|((a, b), c)| format!("{a}>{b}:{}", match c.phase {
            ContactPhase::Free => "free",
            ContactPhase::Engaged => "engaged",
            ContactPhase::Seated => "seated",
        }))
        .collect::<Vec<_>>()
        .join(";")
}

/// Hands pairs that came apart in the world back to the registry.
pub(crate) fn release_broken(world: &World, from: usize, aligner: Option<&mut Aligner>) {
    if let Some(reg) = aligner.and_then(|a| a.registry.as_mut()) {
        for (a, b) in world.decoupled_since(from) {
            reg.release(a, b);
        }
    }
}

/// Every anchor pair of the registry is physically seated.
fn seated(world: &World, reg: &PairRegistry) -> bool {
    reg.pairs.iter().filter(|p| p.kind == PairKind::Anchor).all(|p| {
        let (a, b) = p.oriented();
        world.phase(a.robot, b.robot) == ContactPhase::Seated
    })
}

struct Recorder<'a> {
    rows: Vec<LogRow>,
    world_time: f64,
    phase: &'a str,
}

impl Recorder<'_> {
    fn record(
        &mut self,
        world: &World,
        reg: Option<&PairRegistry>,
        controls: &[ControlInput],
        cmd: &[Option<(f64, f64)>],
        out: Option<&MpcOutput>,
    ) {
        let statuses = pair_statuses(reg);
        let contacts = contacts(world);
        for (r, body) in world.robots.iter().enumerate() {
            let s = body.state;
            let u = controls.get(r).copied().unwrap_or_default();
            let c = cmd.get(r).copied().flatten();
            self.rows.push(LogRow {
                t_s: self.world_time,
                phase: self.phase.to_string(),
                robot: r,
                px_m: s.px,
                py_m: s.py,
                theta_rad: s.theta,
                v_mps: s.v,
                w_radps: s.w,
                v_dot_mps2: u.v_dot,
                w_dot_radps2: u.w_dot,
                cmd_v_mps: c.map(|c| c.0),
                cmd_w_radps: c.map(|c| c.1),
                pair_statuses: statuses.clone(),
                contacts: contacts.clone(),
                solver_iterations: out.map(|o| o.stats.iterations),
                converged: out.map(|o| o.stats.converged),
                fail_safe: out.is_some_and(|o| o.fail_safe),
            });
        }
    }
}

/// Runs the behavior schedule. The log has one row per robot at each
/// planning instant plus a closing row set with the final state.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioLog> {
    cfg.validate()?;
    let settings = cfg.settings()?;
    let mut rng = trial_rng(cfg.seed, u64::MAX >> 32, 0);
    let noise = cfg.initial_noise.noise();
    let bodies: Vec<RobotBody> = cfg
        .robots
        .iter()
        .map(|r| RobotBody {
            state: crate::dynamics::RobotState::at_rest(noise.perturb(&mut rng, r.pose())),
            footprint: settings.footprint.clone(),
            pilot: r.pilot,
        })
        .collect();
    let n = bodies.len();
    let mut world = World::new(bodies);
    world.params = settings.contact.clone();
    world.profile = settings.profile.clone();
    world.joint_limits = settings.joint_limits;
    world.limits = settings.mpc.limits.clone();

    let fps = world.footprints();
    let target = if n > 0 { Some(cfg.target.target(n, &settings.footprint)?) } else { None };
    let mut aligner = match target {
        Some(t) => Some(Aligner::new(t, fps.clone(), MpcController::new(settings.mpc.clone())?)),
        None => None,
    };

    let dt = settings.mpc.dt_s;
    let sub = settings.substep_s;
    let substeps = settings.substeps();
    let mut rec = Recorder { rows: Vec::new(), world_time: 0.0, phase: "" };
    let mut phases = Vec::new();
    let mut wall_ms = Vec::new();
    let mut iterations = 0usize;
    let mut fail_safe = 0usize;
    let mut streak = 0usize;
    let mut max_residual = f64::NEG_INFINITY;
    let mut termination = Termination::Completed;
    let mut coupled_at = None;

    'schedule: for phase in &cfg.schedule {
        let start = world.time;
        let periods = (phase.duration_s() / dt).round() as usize;
        let mut ended_early = false;
        rec.phase = phase.name();
        if let Some(a) = aligner.as_mut() {
            a.controller.reset();
        }
        for _ in 0..periods {
            rec.world_time = world.time;
            let states = world.states();
            let mut cmd = vec![None; n];
            let (controls, out): (Vec<ControlInput>, Option<MpcOutput>) = match phase {
                PhaseSpec::Wiggle { robots, .. } => {
                    let t0 = world.time - start;
                    for (k, c) in cmd.iter_mut().enumerate() {
                        *c = Some(if robots.contains(&k) { wiggle_command(t0, &settings.wiggle) } else { (0.0, 0.0) });
                    }
                    let first: Vec<ControlInput> = (0..n)
                        .map(|k| {
                            let (v, w) = cmd[k].expect("set above");
                            track_velocity(&states[k], v, w, &settings.mpc.limits, sub)
                        })
                        .collect();
                    rec.record(&world, aligner.as_ref().and_then(|a| a.registry.as_ref()), &first, &cmd, None);
                    let seen = world.events.len();
                    for _ in 0..substeps {
                        let t = world.time - start;
                        let u: Vec<ControlInput> = (0..n)
                            .map(|k| {
                                let (v, w) =
                                    if robots.contains(&k) { wiggle_command(t, &settings.wiggle) } else { (0.0, 0.0) };
                                track_velocity(&world.robots[k].state, v, w, &settings.mpc.limits, sub)
                            })
                            .collect();
                        step_world(&mut world, &u, sub);
                    }
                    release_broken(&world, seen, aligner.as_mut());
                    continue;
                }
                _ => {
                    let a = aligner.as_mut().expect("robots exist when the schedule is non-trivial");
                    let started = Instant::now();
                    let o = match phase {
                        PhaseSpec::Align { .. } => a.step(&states)?,
                        PhaseSpec::Goto { goals_mm, .. } => {
                            let goals = goals_mm.iter().map(|g| Some(Point2::new(g[0] * 1e-3, g[1] * 1e-3))).collect();
                            let maintained = a.registry.as_ref().map(|r| r.maintained(&fps)).unwrap_or_default();
                            a.controller.step(&states, &Behavior::Goto(goals), &maintained)?
                        }
                        PhaseSpec::Velocity { targets_mps_radps, .. } => {
                            let targets = targets_mps_radps.iter().map(|t| (t[0], t[1])).collect();
                            let maintained = a.registry.as_ref().map(|r| r.maintained(&fps)).unwrap_or_default();
                            a.controller.step(&states, &Behavior::Velocity(targets), &maintained)?
                        }
                        PhaseSpec::Wiggle { .. } => unreachable!("handled above"),
                    };
                    wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
                    iterations += o.stats.iterations;
                    if o.fail_safe {
                        fail_safe += 1;
                        streak += 1;
                    } else {
                        streak = 0;
                        let maintained = a.registry.as_ref().is_some_and(|r| !r.connected.is_empty());
                        if maintained && o.max_pip_residual.is_finite() {
                            max_residual = max_residual.max(o.max_pip_residual);
                        }
                    }
                    let c = o.controls.clone();
                    (c, Some(o))
                }
            };
            let reg = aligner.as_ref().and_then(|a| a.registry.as_ref());
            rec.record(&world, reg, &controls, &cmd, out.as_ref());
            if coupled_at.is_none() && reg.is_some_and(|r| r.all_connected() && !r.pairs.is_empty()) {
                coupled_at = Some(world.time);
            }
            if streak >= cfg.fail_safe_limit {
                termination = Termination::FailSafe;
                phases.push(PhaseReport { kind: phase.name().into(), start_s: start, end_s: world.time, ended_early: true });
                break 'schedule;
            }
            if matches!(phase, PhaseSpec::Align { until_coupled: true, .. })
                && reg.is_some_and(|r| r.all_connected() && seated(&world, r))
            {
                ended_early = true;
                break;
            }
            let seen = world.events.len();
            for _ in 0..substeps {
                step_world(&mut world, &controls, sub);
            }
            release_broken(&world, seen, aligner.as_mut());
        }
        phases.push(PhaseReport { kind: phase.name().into(), start_s: start, end_s: world.time, ended_early });
    }

    rec.phase = "end";
    rec.world_time = world.time;
    let reg = aligner.as_ref().and_then(|a| a.registry.as_ref());
    rec.record(&world, reg, &[], &[], None);

    let pairs = reg
        .map(|r| {
            r.pairs
                .iter()
                .enumerate()
                .map(|(i, p)| PairReport {
                    robots: p.robots(),
                    status: p.status.as_str().into(),
                    connected: r.connected.contains(&i),
                })
                .collect()
        })
        .unwrap_or_default();
    let solves = wall_ms.len();
    let mut sorted = wall_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let summary = ScenarioSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        termination,
        duration_s: world.time,
        coupled_at_s: coupled_at,
        phases,
        pairs,
        contacts: world.contacts.iter().map(|((a, b), c)| (*a, *b, c.phase)).collect(),
        events: world.events.clone(),
        solver: SolverReport {
            solves,
            fail_safe,
            mean_iterations: if solves == 0 { 0.0 } else { iterations as f64 / solves as f64 },
            median_ms: if solves == 0 { 0.0 } else { sorted[solves / 2] },
            max_ms: sorted.last().copied().unwrap_or(0.0),
            max_maintained_residual: if max_residual.is_finite() { max_residual } else { 0.0 },
        },
    };
    Ok(ScenarioLog { rows: rec.rows, summary })
}

/// Writes rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<()> {
    let io = |e: csv::Error| crate::Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|source| crate::Error::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::PhaseSpec;

    #[test]
    fn empty_schedule_logs_initial_state_only() {
        let cfg = ScenarioConfig { schedule: vec![], ..ScenarioConfig::default() };
        let log = run_scenario(&cfg).unwrap();
        assert_eq!(log.rows.len(), 2);
        assert!(log.rows.iter().all(|r| r.t_s == 0.0 && r.phase == "end"));
        assert_eq!(log.rows[1].px_m, -0.065);
    }

    #[test]
    fn default_scenario_couples() {
        let log = run_scenario(&ScenarioConfig::default()).unwrap();
        assert_eq!(log.summary.termination, Termination::Completed);
        assert!(log.summary.coupled_at_s.is_some_and(|t| t <= 60.0));
        assert_eq!(log.summary.pairs[0].status, "head_inserted");
        assert!(log.summary.phases[0].ended_early);
    }

    #[test]
    fn couple_then_drive_keeps_pair_together() {
        let mut cfg = ScenarioConfig::default();
        cfg.schedule.push(PhaseSpec::Velocity { duration_s: 5.0, targets_mps_radps: vec![[0.03, 0.0]; 2] });
        let log = run_scenario(&cfg).unwrap();
        assert_eq!(log.summary.contacts, vec![(0, 1, ContactPhase::Seated)], "{:?}", log.summary.events);
        assert!(log.summary.solver.max_maintained_residual <= 1e-6);
        let end: Vec<&LogRow> = log.rows.iter().filter(|r| r.phase == "end").collect();
        assert!(end[0].px_m > 0.1, "pair moved forward: {}", end[0].px_m);
    }

    #[test]
    fn wiggle_trace_matches_command() {
        let mut cfg = ScenarioConfig::default();
        cfg.schedule = vec![PhaseSpec::Wiggle { duration_s: 1.0, robots: vec![0] }];
        let log = run_scenario(&cfg).unwrap();
        let p = cfg.settings().unwrap().wiggle;
        for r in log.rows.iter().filter(|r| r.phase == "wiggle" && r.robot == 0) {
            let (v, w) = wiggle_command(r.t_s, &p);
            assert_eq!((r.cmd_v_mps, r.cmd_w_radps), (Some(v), Some(w)));
        }
    }

    #[test]
    fn same_seed_same_log() {
        let mut cfg = ScenarioConfig::default();
        cfg.initial_noise.position_mm = 1.0;
        let (a, b) = (run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
        assert_eq!(a.rows, b.rows);
    }
}
