//! Quasi-static soft-anchor mechanics.
//!
//! The anchor's beams are not simulated as bodies. Insertion and extraction
//! are resolved against measured axial force curves: pushing in works
//! against the forward curve, pulling a seated anchor out works against the
//! much stiffer backward curve unless a wiggle has released the tips.
//!
//! Curve displacements are stored in millimeters and forces in Newtons, as
//! measured; joint state is in meters.

use serde::{Deserialize, Serialize};

const MM: f64 = 1e-3;

/// Piecewise-linear displacement (mm) to force (N) curve, flat past the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceCurve {
    pub displacement_mm: Vec<f64>,
    pub force_n: Vec<f64>,
}

impl ForceCurve {
    pub fn new(displacement_mm: Vec<f64>, force_n: Vec<f64>) -> Self {
        Self { displacement_mm, force_n }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (d, f) = (&self.displacement_mm, &self.force_n);
        if d.len() != f.len() || d.len() < 2 {
            return Err("knot arrays must have equal length >= 2".into());
        }
        if d[0] != 0.0 || f[0] != 0.0 {
            return Err("curve must start at (0 mm, 0 N)".into());
        }
        if d.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("displacements must be strictly increasing".into());
        }
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("forces must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn at(&self, d_mm: f64) -> f64 {
        let (d, f) = (&self.displacement_mm, &self.force_n);
        if d_mm <= d[0] {
            return f[0];
        }
        for i in 1..d.len() {
            if d_mm <= d[i] {
                let s = (d_mm - d[i - 1]) / (d[i] - d[i - 1]);
                return f[i - 1] + s * (f[i] - f[i - 1]);
            }
        }
        *f.last().unwrap()
    }

    /// Maximum of the curve on `[lo, hi]` mm.
    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        let interior = self
            .displacement_mm
            .iter()
            .zip(&self.force_n)
            .filter(|(d, _)| **d > lo && **d < hi)
            .map(|(_, f)| *f);
        interior.fold(self.at(lo).max(self.at(hi)), f64::max)
    }

    /// Smallest `d >= from` (mm) where the curve rises strictly above
    /// `force`, up to `until`. `None` if it never does.
    pub fn first_exceeding(&self, from: f64, until: f64, force: f64) -> Option<f64> {
        if self.at(from) > force {
            return Some(from);
        }
        let d = &self.displacement_mm;
        let mut a = from;
        let mut knots: Vec<f64> = d.iter().copied().filter(|k| *k > from && *k < until).collect();
        knots.push(until);
        for b in knots {
            let (fa, fb) = (self.at(a), self.at(b));
            if fb > force {
                // fa <= force < fb on a linear piece.
                return Some(a + (force - fa) / (fb - fa) * (b - a));
            }
            a = b;
        }
        None
    }
}

/// Calibrated axial force characteristics of the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceProfile {
    /// Resistance while being pushed into an opening.
    pub forward: ForceCurve,
    /// Resistance of seated tips to being pulled back out.
    pub backward: ForceCurve,
    pub pullout_displacement_mm: f64,
    pub slip_displacement_mm: f64,
    /// Vertical holding capacity. Reported only; no planar effect.
    pub holding_load_g: f64,
}

impl Default for ForceProfile {
    fn default() -> Self {
        default_force_profile()
    }
}

/// Knots interpolating the characterization: forward peak just under 0.2 N at 2 mm,
/// backward plateau 0.6 N through 4 mm, slip after 4.7 mm, pull-out
/// beyond 3 mm, 500 g holding load.
pub fn default_force_profile() -> ForceProfile {
    ForceProfile {
        forward: ForceCurve::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0.0, 0.1, 0.19, 0.1, 0.05, 0.05],
        ),
        backward: ForceCurve::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 4.7, 5.0],
            vec![0.0, 0.35, 0.5, 0.6, 0.6, 0.6, 0.15],
        ),
        pullout_displacement_mm: 3.0,
        slip_displacement_mm: 4.7,
        holding_load_g: 500.0,
    }
}

impl ForceProfile {
    pub fn validate(&self) -> Result<(), String> {
        self.forward.validate().map_err(|e| format!("forward: {e}"))?;
        self.backward.validate().map_err(|e| format!("backward: {e}"))?;
        if !(self.pullout_displacement_mm > 0.0) {
            return Err("pullout_displacement_mm must be positive".into());
        }
        Ok(())
    }

    pub fn forward_peak(&self, travel_mm: f64) -> f64 {
        self.forward.max_on(0.0, travel_mm)
    }

    /// Sustained pull needed to drag seated tips through the pull-out travel.
    pub fn pull_barrier(&self) -> f64 {
        self.backward.max_on(0.0, self.pullout_displacement_mm)
    }

    /// Pull needed once a wiggle has freed the tips.
    pub fn released_barrier(&self) -> f64 {
        self.forward.max_on(0.0, self.pullout_displacement_mm)
    }
}

/// Limits of the floating joint between anchor and holder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointLimits {
    pub travel_m: f64,
    pub yaw_rad: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self { travel_m: 5.0 * MM, yaw_rad: 0.5 }
    }
}

/// Insertion (m along the holder axis), yaw, and whether the tips are seated
/// in the slits. Before seating, `insertion` is the beam push displacement;
/// after seating it is the holder slide, mid-travel at zero offset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorJointState {
    pub insertion: f64,
    pub yaw: f64,
    pub tip_seated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingEvent {
    None,
    Inserted,
    Ejected,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingOutcome {
    pub event: CouplingEvent,
    /// Applied force minus the resistance it had to overcome, `>= 0`.
    pub residual_force: f64,
}

impl CouplingOutcome {
    fn new(event: CouplingEvent, residual_force: f64) -> Self {
        Self { event, residual_force: residual_force.max(0.0) }
    }
}

/// Pushes the anchor in with a constant axial force.
///
/// Insertion advances while the force exceeds the forward resistance. It
/// either reaches full travel (seated) or stops where the curve first rises
/// above the force.
pub fn resolve_push(
    joint: AnchorJointState,
    axial_force: f64,
    profile: &ForceProfile,
    limits: &JointLimits,
) -> (AnchorJointState, CouplingOutcome) {
    if axial_force <= 0.0 || joint.tip_seated {
        return (joint, CouplingOutcome::new(CouplingEvent::None, 0.0));
    }
    let travel_mm = limits.travel_m / MM;
    let from = (joint.insertion / MM).clamp(0.0, travel_mm);
    match profile.forward.first_exceeding(from, travel_mm, axial_force) {
        None => {
            let peak = profile.forward.max_on(from, travel_mm);
            let seated = AnchorJointState { insertion: limits.travel_m, yaw: joint.yaw, tip_seated: true };
            (seated, CouplingOutcome::new(CouplingEvent::Inserted, axial_force - peak))
        }
        Some(stop) => {
            let held = AnchorJointState { insertion: stop * MM, ..joint };
            (held, CouplingOutcome::new(CouplingEvent::Blocked, 0.0))
        }
    }
}

/// Pulls on the anchor. Seated tips hold against the backward curve unless
/// the recent yaw history shows a wiggle of at least `yaw_release`, in which
/// case the tips come free and only the forward curve resists.
pub fn resolve_pull(
    joint: AnchorJointState,
    axial_force: f64,
    yaw_history: &[f64],
    yaw_release: f64,
    profile: &ForceProfile,
) -> (AnchorJointState, CouplingOutcome) {
    let ejected = |f: f64| {
        (
            AnchorJointState { insertion: 0.0, yaw: joint.yaw, tip_seated: false },
            CouplingOutcome::new(CouplingEvent::Ejected, f),
        )
    };
    if axial_force <= 0.0 {
        return (joint, CouplingOutcome::new(CouplingEvent::None, 0.0));
    }
    if !joint.tip_seated {
        return ejected(axial_force);
    }
    let max_yaw = yaw_history.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    if max_yaw >= yaw_release {
        let barrier = profile.released_barrier();
        if axial_force >= barrier {
            return ejected(axial_force - barrier);
        }
        let loose = AnchorJointState { tip_seated: false, ..joint };
        return (loose, CouplingOutcome::new(CouplingEvent::Blocked, 0.0));
    }
    let barrier = profile.pull_barrier();
    if axial_force >= barrier {
        ejected(axial_force - barrier)
    } else {
        (joint, CouplingOutcome::new(CouplingEvent::Blocked, 0.0))
    }
}

/// Which joint limit a relative pose ran into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointViolation {
    /// Pulled apart past full holder travel.
    Extension,
    /// Pushed together past the collapsed end.
    Compression,
    Yaw,
}

/// Relative pose of a coupled pair, measured at the anchor point in the
/// opening robot's frame. `axial` is positive when the robots separate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoupledOffset {
    pub axial: f64,
    pub yaw: f64,
}

/// Maps a coupled relative pose to the floating-joint state, saturating at
/// the joint limits and reporting the first limit exceeded.
pub fn clamp_joint(offset: CoupledOffset, limits: &JointLimits) -> (AnchorJointState, Option<JointViolation>) {
    let raw = 0.5 * limits.travel_m + offset.axial;
    let insertion = raw.clamp(0.0, limits.travel_m);
    let yaw = offset.yaw.clamp(-limits.yaw_rad, limits.yaw_rad);
    let violation = if offset.yaw.abs() > limits.yaw_rad {
        Some(JointViolation::Yaw)
    } else if raw > limits.travel_m {
        Some(JointViolation::Extension)
    } else if raw < 0.0 {
        Some(JointViolation::Compression)
    } else {
        None
    };
    (AnchorJointState { insertion, yaw, tip_seated: true }, violation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn profile() -> ForceProfile {
        default_force_profile()
    }

    #[test]
    fn default_profile_values() {
        let p = profile();
        p.validate().unwrap();
        assert_eq!(p.forward.at(0.0), 0.0);
        assert_eq!(p.backward.at(4.0), 0.6);
        assert!(p.forward_peak(5.0) < 0.2);
        assert_eq!(p.pullout_displacement_mm, 3.0);
        assert!(p.backward.at(4.9) < 0.6);
        // Forward resistance stays below backward on [1, 4] mm.
        let mut d = 1.0;
        while d <= 4.0 {
            assert!(p.forward_peak(5.0) <= p.backward.at(d));
            d += 0.01;
        }
    }

    #[test]
    fn asymmetry() {
        let p = profile();
        let fwd = p.forward_peak(5.0);
        let barrier = p.backward.max_on(1.0, p.pullout_displacement_mm);
        assert!(fwd < 0.2 && 0.2 < barrier);
        assert_eq!(barrier, 0.6);
    }

    #[test]
    fn curve_extrapolates_flat() {
        let p = profile();
        assert_eq!(p.forward.at(-1.0), 0.0);
        assert_eq!(p.forward.at(9.0), 0.05);
        assert_abs_diff_eq!(p.forward.at(1.5), 0.145, epsilon = 1e-12);
    }

    #[test]
    fn push_examples() {
        let p = profile();
        let lim = JointLimits::default();
        let (j, out) = resolve_push(AnchorJointState::default(), 0.5, &p, &lim);
        assert_eq!(out.event, CouplingEvent::Inserted);
        assert!(j.tip_seated);
        assert_eq!(j.insertion, lim.travel_m);
        assert_abs_diff_eq!(out.residual_force, 0.31, epsilon = 1e-12);

        // 0.1 N stops where forward(d) first reaches 0.1 N: 1 mm on these knots.
        let (j, out) = resolve_push(AnchorJointState::default(), 0.1, &p, &lim);
        assert_eq!(out.event, CouplingEvent::Blocked);
        assert_abs_diff_eq!(j.insertion, 1.0e-3, epsilon = 1e-15);
        assert!(!j.tip_seated);

        let start = AnchorJointState { insertion: 0.7e-3, ..Default::default() };
        let (j, out) = resolve_push(start, 0.0, &p, &lim);
        assert_eq!(out.event, CouplingEvent::None);
        assert_eq!(j, start);
    }

    #[test]
    fn push_at_exact_peak_inserts() {
        let p = profile();
        let (j, out) = resolve_push(AnchorJointState::default(), p.forward_peak(5.0), &p, &JointLimits::default());
        assert_eq!(out.event, CouplingEvent::Inserted);
        assert!(j.tip_seated);
    }

    #[test]
    fn pull_examples() {
        let p = profile();
        let seated = AnchorJointState { insertion: 2.5e-3, yaw: 0.0, tip_seated: true };
        let (_, out) = resolve_pull(seated, 0.5, &[0.0, 0.05, -0.02], 0.25, &p);
        assert_eq!(out.event, CouplingEvent::Blocked);

        let (j, out) = resolve_pull(seated, 0.5, &[0.1, 0.4, -0.3], 0.25, &p);
        assert_eq!(out.event, CouplingEvent::Ejected);
        assert!(!j.tip_seated);

        let loose = AnchorJointState { tip_seated: false, ..seated };
        let (_, out) = resolve_pull(loose, 0.01, &[], 0.25, &p);
        assert_eq!(out.event, CouplingEvent::Ejected);
    }

    #[test]
    fn push_then_pull_sequences() {
        let p = profile();
        let lim = JointLimits::default();
        let (seated, _) = resolve_push(AnchorJointState::default(), 0.5, &p, &lim);
        let (_, out) = resolve_pull(seated, 0.5, &[0.0; 10], 0.25, &p);
        assert_eq!(out.event, CouplingEvent::Blocked);
        let (_, out) = resolve_pull(seated, 0.5, &[0.0, 0.2, 0.4, 0.1], 0.25, &p);
        assert_eq!(out.event, CouplingEvent::Ejected);
    }

    #[test]
    fn clamp_examples() {
        let lim = JointLimits::default();
        let (j, v) = clamp_joint(CoupledOffset::default(), &lim);
        assert_eq!(j.insertion, 2.5e-3);
        assert_eq!(j.yaw, 0.0);
        assert!(v.is_none());

        let (j, v) = clamp_joint(CoupledOffset { axial: 0.0, yaw: 0.3 }, &lim);
        assert_eq!(j.yaw, 0.3);
        assert!(v.is_none());

        let (j, v) = clamp_joint(CoupledOffset { axial: 0.0, yaw: 0.7 }, &lim);
        assert_eq!(j.yaw, 0.5);
        assert_eq!(v, Some(JointViolation::Yaw));

        let (j, v) = clamp_joint(CoupledOffset { axial: 4e-3, yaw: 0.0 }, &lim);
        assert_eq!(j.insertion, 5e-3);
        assert_eq!(v, Some(JointViolation::Extension));
    }

    proptest! {
        #[test]
        fn enough_push_always_seats(start_mm in 0.0..5.0f64, f in 0.2..2.0f64) {
            let start = AnchorJointState { insertion: start_mm * 1e-3, ..Default::default() };
            let (j, out) = resolve_push(start, f, &profile(), &JointLimits::default());
            prop_assert_eq!(out.event, CouplingEvent::Inserted);
            prop_assert!(j.tip_seated);
        }

        #[test]
        fn seated_holds_without_wiggle(
            f in 0.0..=0.5f64,
            hist in proptest::collection::vec(-0.249..0.249f64, 0..20)
        ) {
            let seated = AnchorJointState { insertion: 2.5e-3, yaw: 0.0, tip_seated: true };
            let (j, out) = resolve_pull(seated, f, &hist, 0.25, &profile());
            prop_assert_ne!(out.event, CouplingEvent::Ejected);
            prop_assert!(j.tip_seated);
        }

        #[test]
        fn blocked_push_stops_on_curve(f in 0.01..0.189f64) {
            let p = profile();
            let (j, out) = resolve_push(AnchorJointState::default(), f, &p, &JointLimits::default());
            prop_assert_eq!(out.event, CouplingEvent::Blocked);
            let d = j.insertion * 1e3;
            prop_assert!((p.forward.at(d) - f).abs() < 1e-9);
            // Brute-force scan: nothing before the stop exceeds f.
            let mut s = 0.0;
            while s < d { prop_assert!(p.forward.at(s) <= f + 1e-12); s += 1e-3; }
        }
    }
}
