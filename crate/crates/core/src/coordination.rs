//! Connection-pair lifecycle: which pairs to couple, in what order, and how
//! far along each one is.
//!
//! A pair starts `Decoupled`, becomes `HeadAligned` once the anchor head is
//! inside the partner's opening, and `HeadInserted` once the anchor point
//! sits inside the partner's body; inserted pairs move from the active list
//! to the connected list and are held by the MPC from then on.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, RobotState};
use crate::geometry::{
    footprint_polygon, opening_triangle, point_in_polygon, rotate, transform_point, Point2, Pose2,
    RobotFootprint,
};
use crate::mpc::{AlignPair, Behavior, ConnectionPoint, MaintainedPair, MpcController, MpcOutput};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Decoupled,
    HeadAligned,
    HeadInserted,
}

impl PairStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PairStatus::Decoupled => "decoupled",
            PairStatus::HeadAligned => "head_aligned",
            PairStatus::HeadInserted => "head_inserted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Anchor,
    Knob,
}

/// Which face of the body a connection point is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Front,
    Back,
    Left,
    Right,
}

pub fn placement(offset: Point2) -> Option<Placement> {
    let (ax, ay) = (offset.x.abs(), offset.y.abs());
    if (ax - ay).abs() <= 1e-12 {
        return None;
    }
    Some(if ax > ay {
        if offset.x > 0.0 {
            Placement::Front
        } else {
            Placement::Back
        }
    } else if offset.y > 0.0 {
        Placement::Left
    } else {
        Placement::Right
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionPair {
    pub ci: ConnectionPoint,
    pub cj: ConnectionPoint,
    pub status: PairStatus,
    pub kind: PairKind,
    /// Robot carrying the anchor (anchor pairs only).
    pub anchor_index: Option<usize>,
    /// Anchor head frame, `l` behind the anchor's connection point.
    pub head: Option<ConnectionPoint>,
}

impl ConnectionPair {
    pub fn robots(&self) -> (usize, usize) {
        (self.ci.robot, self.cj.robot)
    }

    pub fn involves(&self, robot: usize) -> bool {
        self.ci.robot == robot || self.cj.robot == robot
    }

    /// `(anchor side, opening side)`; `(ci, cj)` for knob pairs.
    pub fn oriented(&self) -> (ConnectionPoint, ConnectionPoint) {
        match self.anchor_index {
            Some(a) if a == self.cj.robot => (self.cj, self.ci),
            _ => (self.ci, self.cj),
        }
    }

    pub fn align_pair(&self) -> AlignPair {
        (self.ci, self.cj)
    }

    /// Constraint that keeps this pair coupled once connected.
    pub fn maintained(&self, footprints: &[RobotFootprint]) -> MaintainedPair {
        let (a, b) = self.oriented();
        match self.kind {
            PairKind::Anchor => {
                let fp = &footprints[b.robot];
                MaintainedPair::Anchor {
                    anchor: a,
                    opening: b,
                    triangle: [Point2::default(), fp.front_right(), fp.front_left()],
                }
            }
            PairKind::Knob => MaintainedPair::Knob { a, b },
        }
    }
}

/// Status, type, anchor owner and head for every goal pair.
pub fn augment_pairs(goal: &[AlignPair], footprints: &[RobotFootprint]) -> Result<Vec<ConnectionPair>> {
    goal.iter()
        .enumerate()
        .map(|(k, &(ci, cj))| {
            for c in [ci, cj] {
                if c.robot >= footprints.len() {
                    return Err(Error::InvalidPair(format!("pair {k} references robot {}", c.robot)));
                }
            }
            if ci.robot == cj.robot {
                return Err(Error::InvalidPair(format!("pair {k} joins robot {} to itself", ci.robot)));
            }
            let (pi, pj) = (placement(ci.offset), placement(cj.offset));
            let (kind, anchor_index) = match (pi, pj) {
                (Some(Placement::Back), Some(Placement::Front)) => (PairKind::Anchor, Some(ci.robot)),
                (Some(Placement::Front), Some(Placement::Back)) => (PairKind::Anchor, Some(cj.robot)),
                (Some(Placement::Left | Placement::Right), Some(Placement::Left | Placement::Right)) => {
                    (PairKind::Knob, None)
                }
                _ => {
                    return Err(Error::InvalidPair(format!(
                        "pair {k}: endpoint placement {pi:?}/{pj:?} is neither front-back nor side-side"
                    )))
                }
            };
            let head = anchor_index.map(|a| {
                let c = if a == ci.robot { ci } else { cj };
                let l = footprints[a].anchor_length;
                ConnectionPoint { offset: c.offset + Point2::new(-l, 0.0), ..c }
            });
            Ok(ConnectionPair { ci, cj, status: PairStatus::Decoupled, kind, anchor_index, head })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRegistry {
    /// Augmented goal pairs; `active` and `connected` index into it.
    pub pairs: Vec<ConnectionPair>,
    pub active: Vec<usize>,
    pub connected: Vec<usize>,
    pub epsilon: f64,
}

impl PairRegistry {
    pub fn new(pairs: Vec<ConnectionPair>, epsilon: f64) -> Self {
        Self { pairs, active: Vec::new(), connected: Vec::new(), epsilon }
    }

    pub fn all_connected(&self) -> bool {
        self.connected.len() == self.pairs.len()
    }

    pub fn maintained(&self, footprints: &[RobotFootprint]) -> Vec<MaintainedPair> {
        self.connected.iter().map(|&i| self.pairs[i].maintained(footprints)).collect()
    }

    /// Drops the connected pair with this anchor and opening robot back to
    /// `Decoupled`; returns whether there was one.
    pub fn release(&mut self, anchor: usize, opening: usize) -> bool {
        let found = self.connected.iter().position(|&i| {
            let (a, b) = self.pairs[i].oriented();
            (a.robot, b.robot) == (anchor, opening)
        });
        let Some(pos) = found else { return false };
        let i = self.connected.remove(pos);
        self.pairs[i].status = PairStatus::Decoupled;
        true
    }

    pub fn active_pairs(&self) -> Vec<AlignPair> {
        self.active.iter().map(|&i| self.pairs[i].align_pair()).collect()
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.pairs.len();
        for &i in self.active.iter().chain(&self.connected) {
            if i >= n {
                return Err(format!("pair index {i} out of range"));
            }
        }
        if let Some(i) = self.active.iter().find(|i| self.connected.contains(i)) {
            return Err(format!("pair {i} is both active and connected"));
        }
        for (x, &a) in self.active.iter().enumerate() {
            for &b in &self.active[x + 1..] {
                let (p, q) = (&self.pairs[a], &self.pairs[b]);
                if p.involves(q.ci.robot) || p.involves(q.cj.robot) {
                    return Err(format!("active pairs {a} and {b} share a robot"));
                }
            }
        }
        for &c in &self.connected {
            if self.pairs[c].status != PairStatus::HeadInserted {
                return Err(format!("connected pair {c} is not inserted"));
            }
        }
        Ok(())
    }
}

fn world(states: &[RobotState], c: &ConnectionPoint) -> Point2 {
    transform_point(&states[c.robot].pose(), c.offset)
}

/// Knob pairs have no head; they count as aligned within this many ε.
const KNOB_ALIGN_FACTOR: f64 = 3.0;

/// Advances statuses of active pairs and moves inserted ones to connected.
pub fn update_pairs(reg: &mut PairRegistry, states: &[RobotState], footprints: &[RobotFootprint]) {
    let eps = reg.epsilon;
    let mut still_active = Vec::with_capacity(reg.active.len());
    for &idx in &reg.active {
        let pair = &mut reg.pairs[idx];
        let (a, b) = pair.oriented();
        let other_pose = states[b.robot].pose();
        let other_fp = &footprints[b.robot];
        let (head_in, point_in) = match pair.kind {
            PairKind::Anchor => {
                let head = world(states, pair.head.as_ref().expect("anchor pairs carry a head"));
                let tri = opening_triangle(&other_pose, other_fp);
                let body = footprint_polygon(&other_pose, other_fp);
                (point_in_polygon(head, &tri, eps), point_in_polygon(world(states, &a), &body, eps))
            }
            PairKind::Knob => {
                let d = world(states, &a).dist(world(states, &b));
                (d <= KNOB_ALIGN_FACTOR * eps, d <= eps)
            }
        };
        match pair.status {
            PairStatus::Decoupled => {
                if head_in {
                    pair.status = PairStatus::HeadAligned;
                }
            }
            PairStatus::HeadAligned => {
                if point_in {
                    pair.status = PairStatus::HeadInserted;
                } else if !head_in {
                    pair.status = PairStatus::Decoupled;
                }
            }
            PairStatus::HeadInserted => {}
        }
        if pair.status == PairStatus::HeadInserted {
            reg.connected.push(idx);
        } else {
            still_active.push(idx);
        }
    }
    reg.active = still_active;
}

/// Robot-disjoint set of unconnected pairs. Currently active pairs keep
/// priority; the rest are taken by head-to-opening distance, then index.
pub fn assign_active_pairs(reg: &mut PairRegistry, states: &[RobotState]) {
    let mut candidates: Vec<(bool, f64, usize)> = (0..reg.pairs.len())
        .filter(|i| !reg.connected.contains(i))
        .map(|i| {
            let p = &reg.pairs[i];
            let (a, b) = p.oriented();
            let from = p.head.as_ref().map_or_else(|| world(states, &a), |h| world(states, h));
            (!reg.active.contains(&i), from.dist(world(states, &b)), i)
        })
        .collect();
    candidates.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut busy: Vec<usize> = Vec::new();
    let mut active = Vec::new();
    for (_, _, i) in candidates {
        let (r1, r2) = reg.pairs[i].robots();
        if busy.contains(&r1) || busy.contains(&r2) {
            continue;
        }
        busy.extend([r1, r2]);
        active.push(i);
    }
    active.sort_unstable();
    reg.active = active;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPair {
    pub slot_a: usize,
    pub point_a: Point2,
    pub slot_b: usize,
    pub point_b: Point2,
}

/// Desired layout: slot poses in a common frame plus the couplings between
/// slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub slots: Vec<Pose2>,
    pub pairs: Vec<SlotPair>,
}

impl TargetConfig {
    /// `n` robots nose to tail along x, slot 0 in front; each robot's anchor
    /// goes into the opening of the robot behind it.
    pub fn line(n: usize, fp: &RobotFootprint) -> Self {
        let spacing = fp.opening_point.x - fp.anchor_point.x;
        Self {
            slots: (0..n).map(|k| Pose2::new(-(k as f64) * spacing, 0.0, 0.0)).collect(),
            pairs: (0..n.saturating_sub(1))
                .map(|k| SlotPair { slot_a: k, point_a: fp.anchor_point, slot_b: k + 1, point_b: fp.opening_point })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, p) in self.pairs.iter().enumerate() {
            if p.slot_a >= self.slots.len() || p.slot_b >= self.slots.len() || p.slot_a == p.slot_b {
                return Err(Error::InfeasibleTarget(format!("pair {k} references invalid slots")));
            }
        }
        Ok(())
    }
}

/// Matches robots to slots (greedy nearest, after moving the target's
/// centroid onto the robots') and returns the goal pairs in robot indices.
pub fn assign_connection_pairs(target: &TargetConfig, states: &[RobotState]) -> Result<Vec<AlignPair>> {
    target.validate()?;
    let (ns, nr) = (target.slots.len(), states.len());
    if ns > nr {
        return Err(Error::InfeasibleTarget(format!("{ns} slots but only {nr} robots")));
    }
    if ns == 0 {
        return Ok(Vec::new());
    }
    let centroid = |pts: &mut dyn Iterator<Item = Point2>, n: usize| {
        pts.fold(Point2::default(), |a, p| a + p) * (1.0 / n as f64)
    };
    let shift = centroid(&mut states.iter().map(|s| s.position()), nr)
        - centroid(&mut target.slots.iter().map(|s| s.position), ns);
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(ns * nr);
    for (s, slot) in target.slots.iter().enumerate() {
        for (r, st) in states.iter().enumerate() {
            edges.push((st.position().dist(slot.position + shift), s, r));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut slot_robot = vec![usize::MAX; ns];
    let mut taken = vec![false; nr];
    for (_, s, r) in edges {
        if slot_robot[s] == usize::MAX && !taken[r] {
            slot_robot[s] = r;
            taken[r] = true;
        }
    }
    Ok(target
        .pairs
        .iter()
        .map(|p| {
            (
                ConnectionPoint::new(slot_robot[p.slot_a], p.point_a),
                ConnectionPoint::new(slot_robot[p.slot_b], p.point_b),
            )
        })
        .collect())
}

/// Top-level coupling loop: assign once, schedule, plan, update.
#[derive(Debug, Clone)]
pub struct Aligner {
    pub target: TargetConfig,
    pub footprints: Vec<RobotFootprint>,
    pub registry: Option<PairRegistry>,
    pub controller: MpcController,
}

impl Aligner {
    pub fn new(target: TargetConfig, footprints: Vec<RobotFootprint>, controller: MpcController) -> Self {
        Self { target, footprints, registry: None, controller }
    }

    /// Runs one planning step and returns the MPC result.
    pub fn step(&mut self, states: &[RobotState]) -> Result<MpcOutput> {
        if self.registry.is_none() {
            let goal = assign_connection_pairs(&self.target, states)?;
            let pairs = augment_pairs(&goal, &self.footprints)?;
            self.registry = Some(PairRegistry::new(pairs, self.controller.config().epsilon_m));
        }
        let reg = self.registry.as_mut().expect("assigned above");
        assign_active_pairs(reg, states);
        let behavior = Behavior::Connect(reg.active_pairs());
        let out = self.controller.step(states, &behavior, &reg.maintained(&self.footprints))?;
        update_pairs(reg, states, &self.footprints);
        Ok(out)
    }

    pub fn controls_only(&mut self, states: &[RobotState]) -> Result<Vec<ControlInput>> {
        Ok(self.step(states)?.controls)
    }
}

/// Relative pose of robot `b` seen from robot `a`'s anchor side, used to
/// reason about coupled geometry in tests and examples.
pub fn coupled_pose(front: &Pose2, fp_front: &RobotFootprint, fp_back: &RobotFootprint) -> Pose2 {
    let at = transform_point(front, fp_front.anchor_point) - rotate(front.heading, fp_back.opening_point);
    Pose2::new(at.x, at.y, front.heading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::MpcConfig;

    fn fps(n: usize) -> Vec<RobotFootprint> {
        vec![RobotFootprint::default(); n]
    }

    fn line_states(n: usize, gap: f64) -> Vec<RobotState> {
        (0..n).map(|k| RobotState::new(-(k as f64) * gap, 0.0, 0.0, 0.0, 0.0)).collect()
    }

    #[test]
    fn line_targets() {
        let fp = RobotFootprint::default();
        let two = assign_connection_pairs(&TargetConfig::line(2, &fp), &line_states(2, 0.065)).unwrap();
        assert_eq!(two.len(), 1);
        let four = assign_connection_pairs(&TargetConfig::line(4, &fp), &line_states(4, 0.065)).unwrap();
        assert_eq!(four.len(), 3);
        for (k, (a, b)) in four.iter().enumerate() {
            assert_eq!((a.robot, b.robot), (k, k + 1));
        }
    }

    #[test]
    fn robots_in_slots_match_identity() {
        let fp = RobotFootprint::default();
        let target = TargetConfig::line(3, &fp);
        let mut states: Vec<RobotState> = target.slots.iter().map(|p| RobotState::at_rest(*p)).collect();
        states.reverse();
        let goal = assign_connection_pairs(&target, &states).unwrap();
        assert_eq!((goal[0].0.robot, goal[0].1.robot), (2, 1));
        assert_eq!((goal[1].0.robot, goal[1].1.robot), (1, 0));
    }

    #[test]
    fn release_returns_pair_to_decoupled() {
        let fp = RobotFootprint::default();
        let anchor = (ConnectionPoint::new(0, fp.anchor_point), ConnectionPoint::new(1, fp.opening_point));
        let mut reg = PairRegistry::new(augment_pairs(&[anchor], &fps(2)).unwrap(), 0.003);
        reg.pairs[0].status = PairStatus::HeadInserted;
        reg.connected.push(0);
        assert!(!reg.release(1, 0), "orientation matters");
        assert!(reg.release(0, 1));
        assert_eq!(reg.pairs[0].status, PairStatus::Decoupled);
        assert!(reg.connected.is_empty());
        assert!(!reg.release(0, 1));
        reg.check_invariants().unwrap();
    }

    #[test]
    fn too_many_slots_rejected() {
        let fp = RobotFootprint::default();
        let r = assign_connection_pairs(&TargetConfig::line(3, &fp), &line_states(2, 0.065));
        assert!(matches!(r, Err(Error::InfeasibleTarget(_))));
    }

    #[test]
    fn augment_anchor_and_knob() {
        let fp = RobotFootprint::default();
        let anchor = (ConnectionPoint::new(0, fp.anchor_point), ConnectionPoint::new(1, fp.opening_point));
        let knob = (ConnectionPoint::new(2, fp.left_point), ConnectionPoint::new(3, fp.right_point));
        let out = augment_pairs(&[anchor, knob], &fps(4)).unwrap();
        assert_eq!(out[0].kind, PairKind::Anchor);
        assert_eq!(out[0].anchor_index, Some(0));
        assert_eq!(out[0].head.unwrap().offset, fp.anchor_point + Point2::new(-fp.anchor_length, 0.0));
        assert_eq!(out[1].kind, PairKind::Knob);
        assert!(out[1].head.is_none() && out[1].anchor_index.is_none());
        assert!(out.iter().all(|p| p.status == PairStatus::Decoupled));
        // Reversed endpoint order still finds the anchor on the back point.
        let rev = augment_pairs(&[(anchor.1, anchor.0)], &fps(2)).unwrap();
        assert_eq!(rev[0].anchor_index, Some(0));
    }

    #[test]
    fn ambiguous_placement_rejected() {
        let fp = RobotFootprint::default();
        let bad = (ConnectionPoint::new(0, fp.anchor_point), ConnectionPoint::new(1, fp.left_point));
        assert!(matches!(augment_pairs(&[bad], &fps(2)), Err(Error::InvalidPair(_))));
        let corner = (ConnectionPoint::new(0, Point2::new(0.02, 0.02)), ConnectionPoint::new(1, fp.opening_point));
        assert!(augment_pairs(&[corner], &fps(2)).is_err());
    }

    fn registry_for(states: &[RobotState], n: usize) -> PairRegistry {
        let fp = RobotFootprint::default();
        let goal = assign_connection_pairs(&TargetConfig::line(n, &fp), states).unwrap();
        PairRegistry::new(augment_pairs(&goal, &fps(n)).unwrap(), 0.003)
    }

    #[test]
    fn statuses_follow_geometry() {
        let fp = RobotFootprint::default();
        let spacing = fp.opening_point.x - fp.anchor_point.x;
        let far = line_states(2, 0.2);
        let mut reg = registry_for(&far, 2);
        assign_active_pairs(&mut reg, &far);
        update_pairs(&mut reg, &far, &fps(2));
        assert_eq!(reg.pairs[0].status, PairStatus::Decoupled);

        // Head 4 mm past the front face: aligned, anchor point still outside.
        let aligned = line_states(2, spacing + 0.0035 + 0.005 - 0.004);
        update_pairs(&mut reg, &aligned, &fps(2));
        assert_eq!(reg.pairs[0].status, PairStatus::HeadAligned);
        assert_eq!(reg.active, vec![0]);

        // Backing off regresses.
        update_pairs(&mut reg, &far, &fps(2));
        assert_eq!(reg.pairs[0].status, PairStatus::Decoupled);

        update_pairs(&mut reg, &aligned, &fps(2));
        let seated = line_states(2, spacing);
        update_pairs(&mut reg, &seated, &fps(2));
        assert_eq!(reg.pairs[0].status, PairStatus::HeadInserted);
        assert_eq!(reg.connected, vec![0]);
        assert!(reg.active.is_empty());
        reg.check_invariants().unwrap();
    }

    #[test]
    fn shared_robot_blocks_second_pair() {
        let states = line_states(3, 0.065);
        let mut reg = registry_for(&states, 3);
        assign_active_pairs(&mut reg, &states);
        assert_eq!(reg.active.len(), 1);
        reg.check_invariants().unwrap();
        let fp = RobotFootprint::default();
        let states4 = line_states(4, 0.065);
        let disjoint = [
            (ConnectionPoint::new(0, fp.anchor_point), ConnectionPoint::new(1, fp.opening_point)),
            (ConnectionPoint::new(2, fp.anchor_point), ConnectionPoint::new(3, fp.opening_point)),
        ];
        let mut reg4 = PairRegistry::new(augment_pairs(&disjoint, &fps(4)).unwrap(), 0.003);
        assign_active_pairs(&mut reg4, &states4);
        assert_eq!(reg4.active, vec![0, 1]);
        let mut empty = PairRegistry::new(Vec::new(), 0.003);
        assign_active_pairs(&mut empty, &states4);
        assert!(empty.active.is_empty());
    }

    #[test]
    fn closer_pair_wins_tie() {
        let mut states = line_states(3, 0.065);
        states[2].px += 0.01;
        let mut reg = registry_for(&states, 3);
        assign_active_pairs(&mut reg, &states);
        assert_eq!(reg.active, vec![1]);
    }

    #[test]
    fn connected_swarm_holds_still() {
        let fp = RobotFootprint::default();
        let spacing = fp.opening_point.x - fp.anchor_point.x;
        let states = line_states(2, spacing);
        let mut al = Aligner::new(TargetConfig::line(2, &fp), fps(2), MpcController::new(MpcConfig::default()).unwrap());
        for _ in 0..3 {
            al.step(&states).unwrap();
        }
        let reg = al.registry.as_ref().unwrap();
        assert!(reg.all_connected());
        let out = al.step(&states).unwrap();
        assert!(out.stats.converged);
        for u in out.controls {
            assert!(u.v_dot.abs() < 1e-6 && u.w_dot.abs() < 1e-6);
        }
    }

    #[test]
    fn coupled_pose_places_anchor_on_opening() {
        let fp = RobotFootprint::default();
        let front = Pose2::new(0.1, -0.2, 0.7);
        let back = coupled_pose(&front, &fp, &fp);
        let a = transform_point(&front, fp.anchor_point);
        let o = transform_point(&back, fp.opening_point);
        assert!(a.dist(o) < 1e-15);
    }
}
