//! Monte Carlo harnesses: coupling success vs. lateral offset, wiggle
//! decoupling and solver timing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordination::{coupled_pose, Aligner, PairStatus, TargetConfig};
use crate::dynamics::{euler_step, wiggle_command, ControlInput, RobotState};
use crate::geometry::Pose2;
use crate::mpc::{Behavior, ConnectionPoint, MpcController};
use crate::{Error, Result};

use super::scenario::release_broken;
use super::settings::SimSettings;
use super::world::{step_world, track_velocity, RobotBody, SimEventKind, World};

/// Initial-pose perturbation drawn per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialNoise {
    pub position_m: f64,
    pub heading_rad: f64,
}

impl Default for TrialNoise {
    fn default() -> Self {
        Self { position_m: 0.001, heading_rad: 0.02 }
    }
}

impl TrialNoise {
    pub(crate) fn perturb(&self, rng: &mut ChaCha8Rng, p: Pose2) -> Pose2 {
        let mut u = |a: f64| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
        let (dx, dy, dt) = (u(self.position_m), u(self.position_m), u(self.heading_rad));
        Pose2::new(p.position.x + dx, p.position.y + dy, p.heading + dt)
    }
}

/// Independent stream per `(seed, group, trial)`.
pub fn trial_rng(seed: u64, group: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((group << 32) | trial);
    rng
}

/// Runs `f` over `0..n` on `workers` threads; results keep index order.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config { path: "workers".into(), message: e.to_string() })?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

fn world_from(settings: &SimSettings, poses: &[Pose2]) -> World {
    let mut w = World::new(
        poses
            .iter()
            .enumerate()
            .map(|(k, p)| RobotBody { state: RobotState::at_rest(*p), footprint: settings.footprint.clone(), pilot: k == 0 })
            .collect(),
    );
    w.params = settings.contact.clone();
    w.profile = settings.profile.clone();
    w.joint_limits = settings.joint_limits;
    w.limits = settings.mpc.limits.clone();
    w
}

fn advance(world: &mut World, settings: &SimSettings, controls: &[ControlInput]) {
    for _ in 0..settings.substeps() {
        step_world(world, controls, settings.substep_s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingSetup {
    /// Center distance along x at the start.
    pub separation_m: f64,
    pub timeout_s: f64,
    pub noise: TrialNoise,
}

impl Default for CouplingSetup {
    fn default() -> Self {
        Self { separation_m: 0.065, timeout_s: 60.0, noise: TrialNoise::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrial {
    pub offset_m: f64,
    pub trial: usize,
    pub success: bool,
    /// Time to `head_inserted`, or the timeout.
    pub time_s: f64,
    pub plans: usize,
    pub fail_safe_plans: usize,
    pub captured: bool,
}

/// One coupling attempt: robot 0 in front, robot 1 behind it and shifted
/// sideways by `offset_m`, both aligning with the line target.
pub fn coupling_trial(
    settings: &SimSettings,
    setup: &CouplingSetup,
    offset_m: f64,
    trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CouplingTrial> {
    let front = setup.noise.perturb(rng, Pose2::new(0.0, 0.0, 0.0));
    let back = setup.noise.perturb(rng, Pose2::new(-setup.separation_m, offset_m, 0.0));
    let mut world = world_from(settings, &[front, back]);
    let fp = settings.footprint.clone();
    let mut aligner = Aligner::new(
        TargetConfig::line(2, &fp),
        vec![fp.clone(), fp],
        MpcController::new(settings.mpc.clone())?,
    );
    let plans = (setup.timeout_s / settings.mpc.dt_s).ceil() as usize;
    let mut result = CouplingTrial {
        offset_m,
        trial,
        success: false,
        time_s: setup.timeout_s,
        plans: 0,
        fail_safe_plans: 0,
        captured: false,
    };
    for _ in 0..plans {
        let out = aligner.step(&world.states())?;
        result.plans += 1;
        result.fail_safe_plans += usize::from(out.fail_safe);
        let reg = aligner.registry.as_ref().expect("registry assigned on first step");
        if reg.pairs.iter().all(|p| p.status == PairStatus::HeadInserted) {
            result.success = true;
            result.time_s = world.time;
            break;
        }
        let seen = world.events.len();
        advance(&mut world, settings, &out.controls);
        release_broken(&world, seen, Some(&mut aligner));
    }
    result.captured = world.events.iter().any(|e| e.kind == SimEventKind::Captured);
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSummary {
    pub offset_m: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean time over successful trials; `NaN` when none succeeded.
    pub mean_time_s: f64,
}

pub fn summarize_offsets(offsets_m: &[f64], trials: &[CouplingTrial]) -> Vec<OffsetSummary> {
    offsets_m
        .iter()
        .map(|&o| {
            let group: Vec<&CouplingTrial> = trials.iter().filter(|t| t.offset_m == o).collect();
            let ok: Vec<f64> = group.iter().filter(|t| t.success).map(|t| t.time_s).collect();
            OffsetSummary {
                offset_m: o,
                trials: group.len(),
                successes: ok.len(),
                success_rate: if group.is_empty() { 0.0 } else { ok.len() as f64 / group.len() as f64 },
                mean_time_s: if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 },
            }
        })
        .collect()
}

/// `trials` attempts per offset, spread over `workers` threads. Results are
/// ordered by offset, then trial, whatever the worker count.
pub fn run_coupling_experiment(
    settings: &SimSettings,
    setup: &CouplingSetup,
    offsets_m: &[f64],
    trials: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<CouplingTrial>> {
    settings.validate()?;
    parallel_map(offsets_m.len() * trials, workers, |i| {
        let (g, t) = (i / trials, i % trials);
        coupling_trial(settings, setup, offsets_m[g], t, &mut trial_rng(seed, g as u64, t as u64))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecouplingSetup {
    pub timeout_s: f64,
    pub noise: TrialNoise,
}

impl Default for DecouplingSetup {
    fn default() -> Self {
        Self { timeout_s: 30.0, noise: TrialNoise { position_m: 0.0005, heading_rad: 0.02 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingTrial {
    pub trial: usize,
    pub success: bool,
    /// Time until the head has left the opening, or the timeout.
    pub time_s: f64,
    pub pull_blocked: bool,
    pub faulted: bool,
}

/// Starts seated, then drives the front robot with the open-loop wiggle
/// while the back robot holds still. Success is a clean ejection followed
/// by the head leaving the opening; a joint fault does not count.
pub fn decoupling_trial(
    settings: &SimSettings,
    setup: &DecouplingSetup,
    trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DecouplingTrial> {
    let fp = &settings.footprint;
    let front = Pose2::new(0.0, 0.0, 0.0);
    let back = setup.noise.perturb(rng, coupled_pose(&front, fp, fp));
    let mut world = world_from(settings, &[front, back]);
    world.seat(0, 1);
    let dt = settings.substep_s;
    let steps = (setup.timeout_s / dt).ceil() as usize;
    let limits = settings.mpc.limits.clone();
    let mut out = DecouplingTrial { trial, success: false, time_s: setup.timeout_s, pull_blocked: false, faulted: false };
    for k in 0..steps {
        let (v, w) = wiggle_command(k as f64 * dt, &settings.wiggle);
        let u = [
            track_velocity(&world.robots[0].state, v, w, &limits, dt),
            track_velocity(&world.robots[1].state, 0.0, 0.0, &limits, dt),
        ];
        step_world(&mut world, &u, dt);
        let ev = &world.events;
        out.pull_blocked |= ev.iter().any(|e| e.kind == SimEventKind::PullBlocked);
        out.faulted |= ev.iter().any(|e| e.kind == SimEventKind::Fault);
        if ev.iter().any(|e| e.kind == SimEventKind::Separated) {
            out.success = !out.faulted;
            out.time_s = world.time;
            break;
        }
    }
    Ok(out)
}

pub fn run_decoupling_experiment(
    settings: &SimSettings,
    setup: &DecouplingSetup,
    trials: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<DecouplingTrial>> {
    settings.validate()?;
    parallel_map(trials, workers, |t| decoupling_trial(settings, setup, t, &mut trial_rng(seed, 0, t as u64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCell {
    pub robots: usize,
    pub horizon: usize,
    pub solves: usize,
    pub median_ms: f64,
    pub median_iterations: usize,
    pub converged: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of receding-horizon solves for a line of `robots`
/// aligning nose to tail, without any maintained inter-robot constraint.
/// Runs single-threaded so cells do not compete for cores.
pub fn timing_cell(settings: &SimSettings, robots: usize, horizon: usize, solves: usize, seed: u64) -> Result<TimingCell> {
    let mut cfg = settings.mpc.clone();
    cfg.horizon = horizon;
    cfg.constraint_horizon = cfg.constraint_horizon.min(horizon);
    let fp = &settings.footprint;
    let mut rng = trial_rng(seed, robots as u64, horizon as u64);
    let noise = TrialNoise { position_m: 0.005, heading_rad: 0.1 };
    let mut states: Vec<RobotState> = (0..robots)
        .map(|k| RobotState::at_rest(noise.perturb(&mut rng, Pose2::new(-(k as f64) * 0.065, 0.0, 0.0))))
        .collect();
    let pairs: Vec<(ConnectionPoint, ConnectionPoint)> = (1..robots)
        .map(|k| (ConnectionPoint::new(k - 1, fp.anchor_point), ConnectionPoint::new(k, fp.opening_point)))
        .collect();
    let behavior = Behavior::Connect(pairs);
    let mut ctrl = MpcController::new(cfg.clone())?;
    let mut times = Vec::with_capacity(solves);
    let mut iters = Vec::with_capacity(solves);
    let mut converged = 0;
    for _ in 0..solves {
        let started = Instant::now();
        let out = ctrl.step(&states, &behavior, &[])?;
        times.push(started.elapsed().as_secs_f64() * 1e3);
        iters.push(out.stats.iterations as f64);
        converged += usize::from(out.stats.converged);
        for (s, u) in states.iter_mut().zip(&out.controls) {
            *s = euler_step(s, u, cfg.dt_s);
        }
    }
    Ok(TimingCell {
        robots,
        horizon,
        solves,
        median_ms: median(times),
        median_iterations: median(iters) as usize,
        converged,
    })
}

pub fn run_timing_benchmark(
    settings: &SimSettings,
    robots: &[usize],
    horizons: &[usize],
    solves: usize,
    seed: u64,
) -> Result<Vec<TimingCell>> {
    settings.validate()?;
    let mut cells = Vec::new();
    for &n in robots {
        for &h in horizons {
            cells.push(timing_cell(settings, n, h, solves, seed)?);
        }
    }
    Ok(cells)
}

/// Offsets given in millimetres, as on the command line.
pub fn offsets_from_mm(mm: &[f64]) -> Vec<f64> {
    mm.iter().map(|v| v * 1e-3).collect()
}
