use serde::{Deserialize, Serialize};

use crate::anchor::{ForceProfile, JointLimits};
use crate::dynamics::WiggleParams;
use crate::geometry::RobotFootprint;
use crate::mpc::MpcConfig;
use crate::{Error, Result};

use super::world::ContactParams;

/// Everything the simulator needs besides the initial robots, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub mpc: MpcConfig,
    pub footprint: RobotFootprint,
    pub contact: ContactParams,
    pub profile: ForceProfile,
    pub joint_limits: JointLimits,
    pub wiggle: WiggleParams,
    /// Physics step; the planner runs every `mpc.dt_s`.
    pub substep_s: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            mpc: MpcConfig::default(),
            footprint: RobotFootprint::default(),
            contact: ContactParams::default(),
            profile: ForceProfile::default(),
            joint_limits: JointLimits::default(),
            wiggle: WiggleParams { v_bias_mps: 0.03, w_max_radps: 0.6, frequency_radps: std::f64::consts::PI },
            substep_s: 0.02,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        self.mpc.validate()?;
        self.footprint.validate()?;
        let cfg = |m: String| Error::Config { path: "settings".into(), message: m };
        self.contact.validate().map_err(cfg)?;
        self.profile.validate().map_err(cfg)?;
        if !(self.substep_s > 0.0 && self.substep_s <= self.mpc.dt_s) {
            return Err(cfg("substep must be positive and no longer than the planning period".into()));
        }
        if !(self.joint_limits.travel_m > 0.0 && self.joint_limits.yaw_rad > 0.0) {
            return Err(cfg("joint limits must be positive".into()));
        }
        Ok(())
    }

    /// Physics steps per planning period.
    pub fn substeps(&self) -> usize {
        (self.mpc.dt_s / self.substep_s).round().max(1.0) as usize
    }
}
