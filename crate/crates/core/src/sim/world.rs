//! Planar world with quasi-static anchor contact.
//!
//! Robots integrate their own dynamics; afterwards every anchor/opening
//! pairing is checked and positions are projected to respect contact:
//!
//! - `Free`: an anchor head arriving at another robot's front face is
//!   captured if it is within the funnel, otherwise it is stopped at the
//!   face and may only slide along it when pushed at an angle steeper than
//!   the friction cone.
//! - `Engaged`: the head is in the opening; the beams resist insertion per
//!   the forward force curve until the tips seat.
//! - `Seated`: the floating joint allows limited slide and yaw; pulling past
//!   the slide loads the tips, which hold unless a recent wiggle freed them.
//!
//! Corrections are split evenly between the two robots and only translate
//! them; rotation is never corrected.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::anchor::{
    clamp_joint, resolve_pull, resolve_push, AnchorJointState, CoupledOffset, CouplingEvent, ForceProfile,
    JointLimits, JointViolation,
};
use crate::dynamics::{euler_step, ActuationLimits, ControlInput, RobotState};
use crate::geometry::{footprint_polygon, normalize_angle, rotate, transform_point, Point2, RobotFootprint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Lateral head offset, in the opening robot's frame, that still enters.
    pub capture_half_width_m: f64,
    /// Largest relative yaw at which the head can enter.
    pub capture_yaw_rad: f64,
    /// Coulomb coefficient between head and front face.
    pub friction: f64,
    /// Push or pull force of a robot at full speed.
    pub force_max_n: f64,
    /// Closing speed at which the full force is reached.
    pub force_saturation_mps: f64,
    /// Lateral play of a seated head.
    pub lateral_play_m: f64,
    /// Remaining beam travel below which the tips catch the slits.
    pub seat_snap_m: f64,
    /// Yaw amplitude that frees seated tips.
    pub yaw_release_rad: f64,
    /// Window over which yaw amplitude is remembered.
    pub yaw_window_s: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            capture_half_width_m: 0.004,
            capture_yaw_rad: 0.5,
            friction: 0.5,
            force_max_n: 0.5,
            force_saturation_mps: 0.01,
            lateral_play_m: 0.002,
            seat_snap_m: 0.0005,
            yaw_release_rad: 0.25,
            yaw_window_s: 1.0,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            self.capture_half_width_m,
            self.capture_yaw_rad,
            self.force_max_n,
            self.force_saturation_mps,
            self.yaw_window_s,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("capture sizes, force and windows must be positive".into());
        }
        if [self.friction, self.lateral_play_m, self.seat_snap_m, self.yaw_release_rad].iter().any(|v| !(*v >= 0.0)) {
            return Err("friction, lateral play, seat snap and yaw release must be nonnegative".into());
        }
        Ok(())
    }

    /// Axial force from a closing speed, saturating at `force_max_n`.
    pub fn force(&self, speed: f64) -> f64 {
        self.force_max_n * (speed / self.force_saturation_mps).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactPhase {
    Free,
    Engaged,
    Seated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub phase: ContactPhase,
    pub joint: AnchorJointState,
    /// `(t, relative yaw)` samples while seated.
    pub yaw_history: VecDeque<(f64, f64)>,
    /// Set once the pair has been seated and then let go.
    pub released: bool,
}

impl Contact {
    fn new(phase: ContactPhase) -> Self {
        Self { phase, joint: AnchorJointState::default(), yaw_history: VecDeque::new(), released: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    Captured,
    Inserted,
    PullBlocked,
    Ejected,
    Separated,
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    /// Anchor robot.
    pub anchor: usize,
    /// Opening robot.
    pub opening: usize,
    pub kind: SimEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotBody {
    pub state: RobotState,
    pub footprint: RobotFootprint,
    #[serde(default)]
    pub pilot: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    pub robots: Vec<RobotBody>,
    /// Keyed by `(anchor robot, opening robot)`; absent means free.
    pub contacts: BTreeMap<(usize, usize), Contact>,
    pub time: f64,
    pub params: ContactParams,
    pub profile: ForceProfile,
    pub joint_limits: JointLimits,
    pub limits: ActuationLimits,
    pub events: Vec<SimEvent>,
}

impl World {
    pub fn new(robots: Vec<RobotBody>) -> Self {
        Self {
            robots,
            contacts: BTreeMap::new(),
            time: 0.0,
            params: ContactParams::default(),
            profile: ForceProfile::default(),
            joint_limits: JointLimits::default(),
            limits: ActuationLimits::default(),
            events: Vec::new(),
        }
    }

    pub fn states(&self) -> Vec<RobotState> {
        self.robots.iter().map(|r| r.state).collect()
    }

    pub fn footprints(&self) -> Vec<RobotFootprint> {
        self.robots.iter().map(|r| r.footprint.clone()).collect()
    }

    pub fn phase(&self, anchor: usize, opening: usize) -> ContactPhase {
        self.contacts.get(&(anchor, opening)).map_or(ContactPhase::Free, |c| c.phase)
    }

    /// `(anchor, opening)` pairs that came apart in events from index `from` on.
    pub fn decoupled_since(&self, from: usize) -> Vec<(usize, usize)> {
        self.events[from.min(self.events.len())..]
            .iter()
            .filter(|e| matches!(e.kind, SimEventKind::Fault | SimEventKind::Ejected))
            .map(|e| (e.anchor, e.opening))
            .collect()
    }

    /// Marks a pair as seated at its current pose.
    pub fn seat(&mut self, anchor: usize, opening: usize) {
        let mut c = Contact::new(ContactPhase::Seated);
        c.joint = AnchorJointState { insertion: 0.5 * self.joint_limits.travel_m, yaw: 0.0, tip_seated: true };
        self.contacts.insert((anchor, opening), c);
    }

    fn push(&mut self, anchor: usize, opening: usize, kind: SimEventKind) {
        self.events.push(SimEvent { t: self.time, anchor, opening, kind });
    }

    /// Moves `a` by `+d/2` and `b` by `−d/2`.
    fn separate(&mut self, a: usize, b: usize, d: Point2) {
        let h = d * 0.5;
        self.robots[a].state.px += h.x;
        self.robots[a].state.py += h.y;
        self.robots[b].state.px -= h.x;
        self.robots[b].state.py -= h.y;
    }
}

/// Head, anchor point and yaw of `a`'s anchor seen from robot `b`.
struct AnchorView {
    head: Point2,
    point: Point2,
    yaw: f64,
    /// Unit axes of `b` in world frame.
    ex: Point2,
    ey: Point2,
}

fn view(states: &[RobotState], fps: &[&RobotFootprint], a: usize, b: usize) -> AnchorView {
    let pa = states[a].pose();
    let pb = states[b].pose();
    let head = pb.to_body(transform_point(&pa, fps[a].head_point()));
    let point = pb.to_body(transform_point(&pa, fps[a].anchor_point));
    AnchorView {
        head,
        point,
        yaw: normalize_angle(pa.heading - pb.heading),
        ex: rotate(pb.heading, Point2::new(1.0, 0.0)),
        ey: rotate(pb.heading, Point2::new(0.0, 1.0)),
    }
}

fn velocity(s: &RobotState) -> Point2 {
    Point2::new(s.v * s.theta.cos(), s.v * s.theta.sin())
}

/// Advances the world by `dt` under per-robot accelerations.
pub fn step_world(world: &mut World, controls: &[ControlInput], dt: f64) {
    let prev = world.states();
    for (r, body) in world.robots.iter_mut().enumerate() {
        let u = controls.get(r).copied().unwrap_or_default();
        body.state = euler_step(&body.state, &world.limits.clamp_control(u), dt);
    }
    world.time += dt;
    resolve_contacts(world, &prev);
    resolve_bodies(world);
}

fn resolve_contacts(world: &mut World, prev: &[RobotState]) {
    let n = world.robots.len();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                resolve_pair(world, prev, a, b);
            }
        }
    }
}

fn resolve_pair(world: &mut World, prev: &[RobotState], a: usize, b: usize) {
    let states = world.states();
    let fps: Vec<&RobotFootprint> = world.robots.iter().map(|r| &r.footprint).collect();
    let fb = fps[b].clone();
    let travel = world.joint_limits.travel_m;
    let v = view(&states, &fps, a, b);
    let depth = fb.half_depth - v.head.x;
    let phase = world.phase(a, b);
    let params = world.params.clone();
    let closing = (velocity(&states[b]) - velocity(&states[a])).dot(v.ex);

    match phase {
        ContactPhase::Free => {
            let back = 2.0 * fb.half_depth - depth;
            let side = fb.half_width - v.head.y.abs();
            if depth <= 0.0 || back <= 0.0 || side <= 0.0 {
                return;
            }
            let before = view(prev, &fps, a, b);
            if fb.half_depth - before.head.x > 1e-9 {
                // Slipped in past a corner or from behind: out through the nearest face.
                let out = if side <= depth.min(back) {
                    v.ey * (side * v.head.y.signum())
                } else if depth <= back {
                    v.ex * depth
                } else {
                    v.ex * -back
                };
                world.separate(a, b, out);
                return;
            }
            if v.head.y.abs() <= params.capture_half_width_m && v.yaw.abs() <= params.capture_yaw_rad {
                world.contacts.insert((a, b), Contact::new(ContactPhase::Engaged));
                world.push(a, b, SimEventKind::Captured);
                return;
            }
            let slide = v.head.y - before.head.y;
            let stick = params.friction * depth;
            let undo = if slide.abs() <= stick { slide } else { stick * slide.signum() };
            world.separate(a, b, v.ex * depth - v.ey * undo);
        }
        ContactPhase::Engaged => {
            if depth <= 0.0 {
                let released = world.contacts[&(a, b)].released;
                world.contacts.remove(&(a, b));
                if released {
                    world.push(a, b, SimEventKind::Separated);
                }
                return;
            }
            let excess = v.head.y.abs() - params.capture_half_width_m;
            if excess > 0.0 {
                world.separate(a, b, v.ey * (-excess * v.head.y.signum()));
            }
            let seat = fb.half_depth - fb.opening_point.x;
            let d = depth - seat;
            let c = world.contacts.get_mut(&(a, b)).expect("engaged contact exists");
            if c.released {
                // Loose tips slide freely until the head meets the battery box.
                c.joint.insertion = d.clamp(0.0, travel);
                if d > travel {
                    world.separate(a, b, v.ex * (d - travel));
                }
                return;
            }
            if d <= c.joint.insertion {
                c.joint.insertion = d.max(0.0);
                return;
            }
            let (joint, out) = resolve_push(c.joint, params.force(closing), &world.profile, &world.joint_limits);
            let snapped = d >= travel - params.seat_snap_m;
            match out.event {
                _ if snapped => {
                    c.phase = ContactPhase::Seated;
                    c.joint = AnchorJointState { insertion: 0.5 * travel, yaw: v.yaw, tip_seated: true };
                    c.yaw_history.clear();
                    c.released = false;
                    world.push(a, b, SimEventKind::Inserted);
                }
                CouplingEvent::Inserted => c.joint.insertion = d,
                _ => {
                    let stop = joint.insertion.max(c.joint.insertion);
                    if d > stop {
                        c.joint.insertion = stop;
                        world.separate(a, b, v.ex * (d - stop));
                    } else {
                        c.joint.insertion = d;
                    }
                }
            }
        }
        ContactPhase::Seated => {
            let lat = v.head.y.abs() - params.lateral_play_m;
            if lat > 0.0 {
                world.separate(a, b, v.ey * (-lat * v.head.y.signum()));
            }
            let t = world.time;
            let seat = fb.half_depth - fb.opening_point.x;
            let axial = seat - (fb.half_depth - v.point.x);
            let (joint, violation) = clamp_joint(CoupledOffset { axial, yaw: v.yaw }, &world.joint_limits);
            let c = world.contacts.get_mut(&(a, b)).expect("seated contact exists");
            c.yaw_history.push_back((t, v.yaw));
            while c.yaw_history.front().is_some_and(|(ts, _)| *ts < t - params.yaw_window_s) {
                c.yaw_history.pop_front();
            }
            let seated_tips = c.joint.tip_seated;
            c.joint = AnchorJointState { tip_seated: seated_tips, ..joint };
            match violation {
                None => {}
                Some(JointViolation::Yaw) => {
                    c.phase = ContactPhase::Engaged;
                    c.joint = AnchorJointState { insertion: travel, yaw: v.yaw, tip_seated: false };
                    c.released = true;
                    world.push(a, b, SimEventKind::Fault);
                }
                Some(JointViolation::Compression) => {
                    let over = -(0.5 * travel + axial);
                    world.separate(a, b, v.ex * over);
                }
                Some(JointViolation::Extension) => {
                    let over = axial - 0.5 * travel;
                    let history: Vec<f64> = c.yaw_history.iter().map(|(_, y)| *y).collect();
                    let (after, out) = resolve_pull(
                        c.joint,
                        params.force(-closing),
                        &history,
                        params.yaw_release_rad,
                        &world.profile,
                    );
                    if out.event == CouplingEvent::Ejected {
                        c.phase = ContactPhase::Engaged;
                        c.joint = AnchorJointState { insertion: travel, yaw: v.yaw, tip_seated: false };
                        c.released = true;
                        world.push(a, b, SimEventKind::Ejected);
                    } else {
                        let first_block = c.joint.tip_seated && !after.tip_seated || out.event == CouplingEvent::Blocked;
                        c.joint.tip_seated = after.tip_seated;
                        world.separate(a, b, v.ex * (-over));
                        if first_block && world.events.last().is_none_or(|e| e.kind != SimEventKind::PullBlocked) {
                            world.push(a, b, SimEventKind::PullBlocked);
                        }
                    }
                }
            }
        }
    }
}

/// Separating-axis overlap of two convex polygons: depth and unit axis
/// pointing from `q` toward `p`.
fn overlap(p: &[Point2], q: &[Point2], cp: Point2, cq: Point2) -> Option<(f64, Point2)> {
    let mut best: Option<(f64, Point2)> = None;
    for poly in [p, q] {
        for i in 0..poly.len() {
            let e = poly[(i + 1) % poly.len()] - poly[i];
            let axis = Point2::new(e.y, -e.x) * (1.0 / e.norm());
            let proj = |s: &[Point2]| {
                s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v.dot(axis);
                    (lo.min(d), hi.max(d))
                })
            };
            let ((p0, p1), (q0, q1)) = (proj(p), proj(q));
            let depth = p1.min(q1) - p0.max(q0);
            if depth <= 0.0 {
                return None;
            }
            if best.is_none_or(|(d, _)| depth < d) {
                let sign = if (cp - cq).dot(axis) >= 0.0 { 1.0 } else { -1.0 };
                best = Some((depth, axis * sign));
            }
        }
    }
    best
}

/// Pushes apart overlapping bodies that are not joined by an anchor.
fn resolve_bodies(world: &mut World) {
    let n = world.robots.len();
    for i in 0..n {
        for j in i + 1..n {
            if world.phase(i, j) != ContactPhase::Free || world.phase(j, i) != ContactPhase::Free {
                continue;
            }
            let (si, sj) = (world.robots[i].state, world.robots[j].state);
            let pi = footprint_polygon(&si.pose(), &world.robots[i].footprint);
            let pj = footprint_polygon(&sj.pose(), &world.robots[j].footprint);
            if let Some((depth, axis)) = overlap(pi.vertices(), pj.vertices(), si.position(), sj.position()) {
                world.separate(i, j, axis * depth);
            }
        }
    }
}

/// Acceleration that moves `(v, w)` toward a velocity command within one step.
pub fn track_velocity(state: &RobotState, v_cmd: f64, w_cmd: f64, limits: &ActuationLimits, dt: f64) -> ControlInput {
    limits.clamp_control(ControlInput::new((v_cmd - state.v) / dt, (w_cmd - state.w) / dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordination::coupled_pose;
    use crate::geometry::Pose2;

    fn two(front: RobotState, back: RobotState) -> World {
        let fp = RobotFootprint::default();
        World::new(vec![
            RobotBody { state: front, footprint: fp.clone(), pilot: true },
            RobotBody { state: back, footprint: fp, pilot: false },
        ])
    }

    fn coupled_world() -> World {
        let fp = RobotFootprint::default();
        let front = Pose2::new(0.0, 0.0, 0.0);
        let back = coupled_pose(&front, &fp, &fp);
        let mut w = two(RobotState::at_rest(front), RobotState::at_rest(back));
        w.seat(0, 1);
        w
    }

    #[test]
    fn idle_robot_stays_put() {
        let mut w = World::new(vec![RobotBody {
            state: RobotState::new(0.1, 0.2, 0.3, 0.0, 0.0),
            footprint: RobotFootprint::default(),
            pilot: false,
        }]);
        let before = w.robots[0].state;
        for _ in 0..50 {
            step_world(&mut w, &[ControlInput::zero()], 0.02);
        }
        assert_eq!(w.robots[0].state, before);
    }

    /// Back robot drives straight into the front robot's anchor at full
    /// push: captured, then seated within travel / speed.
    #[test]
    fn aligned_push_inserts() {
        let mut w = two(RobotState::new(0.0, 0.0, 0.0, 0.0, 0.0), RobotState::new(-0.065, 0.0, 0.0, 0.03, 0.0));
        let mut t_inserted = None;
        for k in 0..200 {
            step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
            if w.events.iter().any(|e| e.kind == SimEventKind::Inserted) {
                t_inserted = Some(k as f64 * 0.02);
                break;
            }
        }
        // Head 4 mm from the face, 3.5 mm free entry, 5 mm of beam travel.
        let t = t_inserted.expect("pair seated");
        let expected = (0.004 + 0.0035 + 0.005) / 0.03;
        assert!((t - expected).abs() <= 0.06, "{t} vs {expected}");
        assert_eq!(w.phase(0, 1), ContactPhase::Seated);
    }

    #[test]
    fn slow_push_stalls_at_peak() {
        // 0.1 N of push: blocked where the forward curve first reaches 0.1 N.
        let mut w = two(RobotState::new(0.0, 0.0, 0.0, 0.0, 0.0), RobotState::new(-0.065, 0.0, 0.0, 0.002, 0.0));
        for _ in 0..2000 {
            step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
        }
        assert_eq!(w.phase(0, 1), ContactPhase::Engaged);
        let ins = w.contacts[&(0, 1)].joint.insertion;
        assert!((ins - 0.001).abs() < 1e-9, "{ins}");
    }

    #[test]
    fn offset_head_is_stopped_by_face() {
        let mut w = two(RobotState::new(0.0, 0.0, 0.0, 0.0, 0.0), RobotState::new(-0.065, 0.010, 0.0, 0.03, 0.0));
        for _ in 0..100 {
            step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
        }
        assert_eq!(w.phase(0, 1), ContactPhase::Free);
        let fps = [&w.robots[0].footprint, &w.robots[1].footprint];
        let v = view(&w.states(), &fps, 0, 1);
        assert!(v.head.x >= 0.025 - 1e-12);
        assert!((v.head.y - -0.010).abs() < 1e-9, "shallow push does not slide");
    }

    #[test]
    fn pull_without_wiggle_is_blocked() {
        let mut w = coupled_world();
        let start = w.robots[0].state.px;
        w.robots[0].state.v = 0.03;
        for _ in 0..250 {
            step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
        }
        assert_eq!(w.phase(0, 1), ContactPhase::Seated);
        let moved = w.robots[0].state.px - w.robots[1].state.px - (start - -0.0525);
        assert!(moved <= 0.005 + 1e-9, "relative displacement {moved}");
        assert!(w.events.iter().any(|e| e.kind == SimEventKind::PullBlocked));
    }

    #[test]
    fn wiggle_then_pull_separates() {
        let mut w = coupled_world();
        let p = crate::dynamics::WiggleParams { v_bias_mps: 0.03, w_max_radps: 0.6, frequency_radps: std::f64::consts::PI };
        let lim = w.limits.clone();
        for k in 0..500 {
            let t = k as f64 * 0.02;
            let (vc, wc) = crate::dynamics::wiggle_command(t, &p);
            let u0 = track_velocity(&w.robots[0].state, vc, wc, &lim, 0.02);
            let u1 = track_velocity(&w.robots[1].state, 0.0, 0.0, &lim, 0.02);
            step_world(&mut w, &[u0, u1], 0.02);
            if w.events.iter().any(|e| e.kind == SimEventKind::Separated) {
                return;
            }
        }
        panic!("never separated: {:?}", w.events);
    }

    #[test]
    fn head_cannot_slip_in_past_a_corner() {
        // Head 10 mm deep but beside the opening robot, then shifted inward.
        let mut w = two(RobotState::new(0.0, 0.0, 0.0, 0.0, 0.0), RobotState::new(-0.051, 0.030, 0.0, 0.0, 0.0));
        step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
        w.robots[1].state.py -= 0.010;
        step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
        assert_eq!(w.phase(0, 1), ContactPhase::Free);
        let fps = [&w.robots[0].footprint, &w.robots[1].footprint];
        let v = view(&w.states(), &fps, 0, 1);
        assert!((v.head.y.abs() - 0.025).abs() < 1e-12, "pushed out through the side: {:?}", v.head);
        assert!(w.events.is_empty());
    }

    #[test]
    fn faulted_pair_does_not_reseat() {
        let mut w = coupled_world();
        w.robots[0].state.w = 2.0;
        for _ in 0..100 {
            if w.robots[0].state.theta > 0.6 {
                w.robots[0].state.w = 0.0;
            }
            step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
        }
        let kinds: Vec<SimEventKind> = w.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![SimEventKind::Fault], "{:?}", w.events);
        assert_ne!(w.phase(0, 1), ContactPhase::Seated);
        assert_eq!(w.decoupled_since(0), vec![(0, 1)]);
    }

    #[test]
    fn bodies_do_not_overlap() {
        let mut w = two(RobotState::new(0.0, 0.0, 0.0, 0.0, 0.0), RobotState::new(0.0, 0.2, -std::f64::consts::FRAC_PI_2, 0.03, 0.0));
        for _ in 0..400 {
            step_world(&mut w, &[ControlInput::zero(), ControlInput::zero()], 0.02);
        }
        let (a, b) = (&w.robots[0], &w.robots[1]);
        let pa = footprint_polygon(&a.state.pose(), &a.footprint);
        let pb = footprint_polygon(&b.state.pose(), &b.footprint);
        let o = overlap(pa.vertices(), pb.vertices(), a.state.position(), b.state.position());
        assert!(o.map_or(true, |(d, _)| d < 1e-3));
    }
}
