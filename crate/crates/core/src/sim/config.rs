//! Scenario file schema. Field names carry their units; everything is
//! converted to SI on load. Unknown fields are rejected and errors name the
//! offending path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchor::{ForceProfile, JointLimits};
use crate::coordination::{SlotPair, TargetConfig};
use crate::dynamics::{ActuationLimits, ButterflyMode, ControlInput, WiggleParams};
use crate::geometry::{Point2, Pose2, RobotFootprint};
use crate::mpc::{CostWeights, MpcConfig};
use crate::{Error, Result};

use super::experiments::{CouplingSetup, DecouplingSetup, TrialNoise};
use super::settings::SimSettings;
use super::world::ContactParams;

const MM: f64 = 1e-3;

/// Seed used when neither the file nor the command line gives one.
pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub x_mm: f64,
    pub y_mm: f64,
    #[serde(default)]
    pub heading_rad: f64,
    #[serde(default)]
    pub pilot: bool,
}

impl RobotSpec {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x_mm * MM, self.y_mm * MM, self.heading_rad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FootprintSpec {
    pub half_width_mm: f64,
    pub half_depth_mm: f64,
    pub anchor_length_mm: f64,
    /// Gap between the bodies of a coupled pair.
    pub gap_mm: f64,
    /// Depth of the seated anchor point behind the front face.
    pub seat_depth_mm: f64,
}

impl Default for FootprintSpec {
    fn default() -> Self {
        Self { half_width_mm: 25.0, half_depth_mm: 25.0, anchor_length_mm: 5.0, gap_mm: 2.5, seat_depth_mm: 3.5 }
    }
}

impl FootprintSpec {
    pub fn footprint(&self) -> Result<RobotFootprint> {
        let fp = RobotFootprint::new(
            self.half_width_mm * MM,
            self.half_depth_mm * MM,
            self.anchor_length_mm * MM,
            self.gap_mm * MM,
            self.seat_depth_mm * MM,
        );
        fp.validate()?;
        Ok(fp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub x_mm: f64,
    pub y_mm: f64,
    #[serde(default)]
    pub heading_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotPairSpec {
    pub slot_a: usize,
    pub point_a_mm: [f64; 2],
    pub slot_b: usize,
    pub point_b_mm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// All robots nose to tail.
    #[default]
    Line,
    Slots { slots: Vec<SlotSpec>, pairs: Vec<SlotPairSpec> },
}

impl TargetSpec {
    pub fn target(&self, n: usize, fp: &RobotFootprint) -> Result<TargetConfig> {
        let mm = |p: [f64; 2]| Point2::new(p[0] * MM, p[1] * MM);
        let t = match self {
            TargetSpec::Line => TargetConfig::line(n, fp),
            TargetSpec::Slots { slots, pairs } => TargetConfig {
                slots: slots.iter().map(|s| Pose2::new(s.x_mm * MM, s.y_mm * MM, s.heading_rad)).collect(),
                pairs: pairs
                    .iter()
                    .map(|p| SlotPair {
                        slot_a: p.slot_a,
                        point_a: mm(p.point_a_mm),
                        slot_b: p.slot_b,
                        point_b: mm(p.point_b_mm),
                    })
                    .collect(),
            },
        };
        t.validate()?;
        Ok(t)
    }
}

/// One entry of the behavior schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseSpec {
    /// Couple toward the target; optionally end as soon as every pair is in.
    Align {
        duration_s: f64,
        #[serde(default)]
        until_coupled: bool,
    },
    /// Drive each robot to a point, keeping coupled pairs together.
    Goto { duration_s: f64, goals_mm: Vec<[f64; 2]> },
    /// Track `[v_mps, w_radps]` per robot, keeping coupled pairs together.
    Velocity { duration_s: f64, targets_mps_radps: Vec<[f64; 2]> },
    /// Open-loop wiggle on the listed robots; the rest hold still.
    Wiggle { duration_s: f64, robots: Vec<usize> },
}

impl PhaseSpec {
    pub fn duration_s(&self) -> f64 {
        match self {
            PhaseSpec::Align { duration_s, .. }
            | PhaseSpec::Goto { duration_s, .. }
            | PhaseSpec::Velocity { duration_s, .. }
            | PhaseSpec::Wiggle { duration_s, .. } => *duration_s,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhaseSpec::Align { .. } => "align",
            PhaseSpec::Goto { .. } => "goto",
            PhaseSpec::Velocity { .. } => "velocity",
            PhaseSpec::Wiggle { .. } => "wiggle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSpec {
    pub v_dot_min_mps2: f64,
    pub v_dot_max_mps2: f64,
    pub w_dot_min_radps2: f64,
    pub w_dot_max_radps2: f64,
    pub v_max_mps: f64,
    pub w_max_radps: f64,
    pub v_min_ratio: f64,
    pub butterfly: ButterflyMode,
}

impl Default for LimitsSpec {
    fn default() -> Self {
        let l = ActuationLimits::default();
        Self {
            v_dot_min_mps2: l.u_min.v_dot,
            v_dot_max_mps2: l.u_max.v_dot,
            w_dot_min_radps2: l.u_min.w_dot,
            w_dot_max_radps2: l.u_max.w_dot,
            v_max_mps: l.v_max_mps,
            w_max_radps: l.w_max_radps,
            v_min_ratio: l.v_min_ratio,
            butterfly: l.butterfly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSpec {
    pub horizon: usize,
    pub constraint_horizon: usize,
    pub dt_s: f64,
    pub epsilon_mm: f64,
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_iterations: usize,
    pub angle_cost_cap: f64,
    pub soft_start_solves: usize,
    pub weights: CostWeights,
    pub limits: LimitsSpec,
}

impl Default for MpcSpec {
    fn default() -> Self {
        let c = MpcConfig::default();
        Self {
            horizon: c.horizon,
            constraint_horizon: c.constraint_horizon,
            dt_s: c.dt_s,
            epsilon_mm: c.epsilon_m / MM,
            kkt_tol: c.kkt_tol,
            feas_tol: c.feas_tol,
            max_iterations: c.max_iterations,
            angle_cost_cap: c.angle_cost_cap,
            soft_start_solves: c.soft_start_solves,
            weights: c.weights,
            limits: LimitsSpec::default(),
        }
    }
}

impl MpcSpec {
    pub fn config(&self) -> MpcConfig {
        let l = &self.limits;
        MpcConfig {
            horizon: self.horizon,
            constraint_horizon: self.constraint_horizon,
            dt_s: self.dt_s,
            weights: self.weights.clone(),
            limits: ActuationLimits {
                u_min: ControlInput::new(l.v_dot_min_mps2, l.w_dot_min_radps2),
                u_max: ControlInput::new(l.v_dot_max_mps2, l.w_dot_max_radps2),
                v_max_mps: l.v_max_mps,
                w_max_radps: l.w_max_radps,
                v_min_ratio: l.v_min_ratio,
                butterfly: l.butterfly,
            },
            kkt_tol: self.kkt_tol,
            feas_tol: self.feas_tol,
            max_iterations: self.max_iterations,
            epsilon_m: self.epsilon_mm * MM,
            angle_cost_cap: self.angle_cost_cap,
            soft_start_solves: self.soft_start_solves,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub position_mm: f64,
    pub heading_rad: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { position_mm: 1.0, heading_rad: 0.02 }
    }
}

impl NoiseSpec {
    pub fn noise(&self) -> TrialNoise {
        TrialNoise { position_m: self.position_mm * MM, heading_rad: self.heading_rad }
    }

    fn zero() -> Self {
        Self { position_mm: 0.0, heading_rad: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupleSpec {
    pub offsets_mm: Vec<f64>,
    pub trials: usize,
    pub timeout_s: f64,
    pub separation_mm: f64,
    pub noise: NoiseSpec,
}

impl Default for CoupleSpec {
    fn default() -> Self {
        Self {
            offsets_mm: vec![0.0, 4.0, 8.0, 16.0, 24.0, 30.0],
            trials: 100,
            timeout_s: 60.0,
            separation_mm: 65.0,
            noise: NoiseSpec::default(),
        }
    }
}

impl CoupleSpec {
    pub fn setup(&self) -> CouplingSetup {
        CouplingSetup { separation_m: self.separation_mm * MM, timeout_s: self.timeout_s, noise: self.noise.noise() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoupleSpec {
    pub trials: usize,
    pub timeout_s: f64,
    pub noise: NoiseSpec,
}

impl Default for DecoupleSpec {
    fn default() -> Self {
        let d = DecouplingSetup::default();
        Self {
            trials: 100,
            timeout_s: d.timeout_s,
            noise: NoiseSpec { position_mm: d.noise.position_m / MM, heading_rad: d.noise.heading_rad },
        }
    }
}

impl DecoupleSpec {
    pub fn setup(&self) -> DecouplingSetup {
        DecouplingSetup { timeout_s: self.timeout_s, noise: self.noise.noise() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSpec {
    pub robots: Vec<usize>,
    pub horizons: Vec<usize>,
    /// Receding-horizon solves per cell.
    pub solves: usize,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self { robots: vec![2, 4, 6, 8], horizons: vec![3, 5, 10], solves: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointSpec {
    pub travel_mm: f64,
    pub yaw_limit_rad: f64,
}

impl Default for JointSpec {
    fn default() -> Self {
        let j = JointLimits::default();
        Self { travel_mm: j.travel_m / MM, yaw_limit_rad: j.yaw_rad }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactSpec {
    pub capture_half_width_mm: f64,
    pub capture_yaw_rad: f64,
    pub friction: f64,
    pub force_max_n: f64,
    pub force_saturation_mps: f64,
    pub lateral_play_mm: f64,
    pub seat_snap_mm: f64,
    pub yaw_release_rad: f64,
    pub yaw_window_s: f64,
}

impl Default for ContactSpec {
    fn default() -> Self {
        let c = ContactParams::default();
        Self {
            capture_half_width_mm: c.capture_half_width_m / MM,
            capture_yaw_rad: c.capture_yaw_rad,
            friction: c.friction,
            force_max_n: c.force_max_n,
            force_saturation_mps: c.force_saturation_mps,
            lateral_play_mm: c.lateral_play_m / MM,
            seat_snap_mm: c.seat_snap_m / MM,
            yaw_release_rad: c.yaw_release_rad,
            yaw_window_s: c.yaw_window_s,
        }
    }
}

impl ContactSpec {
    pub fn params(&self) -> ContactParams {
        ContactParams {
            capture_half_width_m: self.capture_half_width_mm * MM,
            capture_yaw_rad: self.capture_yaw_rad,
            friction: self.friction,
            force_max_n: self.force_max_n,
            force_saturation_mps: self.force_saturation_mps,
            lateral_play_m: self.lateral_play_mm * MM,
            seat_snap_m: self.seat_snap_mm * MM,
            yaw_release_rad: self.yaw_release_rad,
            yaw_window_s: self.yaw_window_s,
        }
    }
}

/// A complete run description: world, schedule and experiment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub substep_s: f64,
    /// Consecutive rejected solves after which a scenario is abandoned.
    pub fail_safe_limit: usize,
    pub robots: Vec<RobotSpec>,
    /// Initial-pose noise applied to `robots`, drawn from `seed`.
    pub initial_noise: NoiseSpec,
    pub footprint: FootprintSpec,
    pub target: TargetSpec,
    pub schedule: Vec<PhaseSpec>,
    pub mpc: MpcSpec,
    pub profile: ForceProfile,
    pub joint: JointSpec,
    pub contact: ContactSpec,
    pub wiggle: WiggleParams,
    pub couple: CoupleSpec,
    pub decouple: DecoupleSpec,
    pub timing: TimingSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let s = SimSettings::default();
        Self {
            seed: DEFAULT_SEED,
            substep_s: s.substep_s,
            fail_safe_limit: 10,
            robots: vec![
                RobotSpec { x_mm: 0.0, y_mm: 0.0, heading_rad: 0.0, pilot: true },
                RobotSpec { x_mm: -65.0, y_mm: 0.0, heading_rad: 0.0, pilot: false },
            ],
            initial_noise: NoiseSpec::zero(),
            footprint: FootprintSpec::default(),
            target: TargetSpec::Line,
            schedule: vec![PhaseSpec::Align { duration_s: 60.0, until_coupled: true }],
            mpc: MpcSpec::default(),
            profile: s.profile,
            joint: JointSpec::default(),
            contact: ContactSpec::default(),
            wiggle: s.wiggle,
            couple: CoupleSpec::default(),
            decouple: DecoupleSpec::default(),
            timing: TimingSpec::default(),
        }
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl ScenarioConfig {
    /// Parses TOML; errors carry the dotted path of the bad field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(&path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    /// SHA-256 over the canonical JSON form, independent of file layout.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn settings(&self) -> Result<SimSettings> {
        let s = SimSettings {
            mpc: self.mpc.config(),
            footprint: self.footprint.footprint()?,
            contact: self.contact.params(),
            profile: self.profile.clone(),
            joint_limits: JointLimits { travel_m: self.joint.travel_mm * MM, yaw_rad: self.joint.yaw_limit_rad },
            wiggle: self.wiggle,
            substep_s: self.substep_s,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.settings()?;
        let n = self.robots.len();
        for (k, r) in self.robots.iter().enumerate() {
            if !(r.x_mm.is_finite() && r.y_mm.is_finite() && r.heading_rad.is_finite()) {
                return Err(config_error(&format!("robots[{k}]"), "pose must be finite"));
            }
        }
        if let TargetSpec::Slots { slots, .. } = &self.target {
            if slots.len() != n {
                return Err(config_error("target.slots", format!("{} slots for {n} robots", slots.len())));
            }
        }
        if n > 0 {
            self.target.target(n, &self.footprint.footprint()?)?;
        }
        for (k, p) in self.schedule.iter().enumerate() {
            let at = |f: &str| format!("schedule[{k}].{f}");
            if !(p.duration_s() >= 0.0 && p.duration_s().is_finite()) {
                return Err(config_error(&at("duration_s"), "must be a nonnegative number"));
            }
            match p {
                PhaseSpec::Goto { goals_mm, .. } if goals_mm.len() != n => {
                    return Err(config_error(&at("goals_mm"), format!("expected {n} goals")));
                }
                PhaseSpec::Velocity { targets_mps_radps, .. } if targets_mps_radps.len() != n => {
                    return Err(config_error(&at("targets_mps_radps"), format!("expected {n} targets")));
                }
                PhaseSpec::Wiggle { robots, .. } if robots.iter().any(|r| *r >= n) => {
                    return Err(config_error(&at("robots"), "robot index out of range"));
                }
                _ => {}
            }
        }
        if self.couple.trials == 0 || self.decouple.trials == 0 || self.timing.solves == 0 {
            return Err(config_error("trials", "trial and solve counts must be at least 1"));
        }
        if self.couple.offsets_mm.iter().any(|o| !o.is_finite()) {
            return Err(config_error("couple.offsets_mm", "offsets must be finite"));
        }
        if !(self.couple.timeout_s > 0.0 && self.decouple.timeout_s > 0.0) {
            return Err(config_error("timeout_s", "timeouts must be positive"));
        }
        if self.timing.robots.contains(&0) || self.timing.horizons.contains(&0) {
            return Err(config_error("timing", "robot counts and horizons must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_field_is_reported_with_path() {
        let err = ScenarioConfig::from_toml_str("[mpc]\nhorizon_steps = 4\n").unwrap_err();
        let Error::Config { path, message } = err else { panic!("{err}") };
        assert_eq!(path, "mpc.horizon_steps");
        assert!(message.contains("horizon_steps"), "{message}");
    }

    #[test]
    fn bad_type_is_reported_with_path() {
        let err = ScenarioConfig::from_toml_str("[[robots]]\nx_mm = \"far\"\ny_mm = 0.0\n").unwrap_err();
        let Error::Config { path, .. } = err else { panic!("{err}") };
        assert_eq!(path, "robots[0].x_mm");
    }

    #[test]
    fn schedule_phases_parse() {
        let text = r#"
            [[schedule]]
            kind = "velocity"
            duration_s = 2.0
            targets_mps_radps = [[0.03, 0.0], [0.03, 0.0]]

            [[schedule]]
            kind = "wiggle"
            duration_s = 5.0
            robots = [0]
        "#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.schedule.len(), 2);
        assert_eq!(cfg.schedule[1].name(), "wiggle");
    }

    #[test]
    fn schedule_length_mismatch_is_rejected() {
        let text = "[[schedule]]\nkind = \"goto\"\nduration_s = 1.0\ngoals_mm = [[0.0, 0.0]]\n";
        let err = ScenarioConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "schedule[0].goals_mm"), "{err}");
    }

    #[test]
    fn units_are_converted() {
        let text = "[mpc]\nepsilon_mm = 2.0\n[footprint]\nhalf_width_mm = 30.0\n";
        let s = ScenarioConfig::from_toml_str(text).unwrap().settings().unwrap();
        assert_eq!(s.mpc.epsilon_m, 0.002);
        assert_eq!(s.footprint.half_width, 0.03);
    }
}
