use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SimError, JOINTS, LEGS};

/// Leg order used everywhere: left-front, right-front, left-hind, right-hind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    LeftFront,
    RightFront,
    LeftHind,
    RightHind,
}

impl Leg {
    pub const ALL: [Leg; LEGS] = [Leg::LeftFront, Leg::RightFront, Leg::LeftHind, Leg::RightHind];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Leg> {
        Self::ALL.get(index).copied()
    }

    /// Joint indices (hip, knee) of this leg in the 8-vector layout.
    pub fn joints(self) -> [usize; 2] {
        let i = self.index();
        [2 * i, 2 * i + 1]
    }
}

/// Static description of the SOLO8-like robot.
///
/// Each leg is a planar two-link chain (hip flexion/extension, knee
/// flexion/extension) swinging in the sagittal plane of the trunk. Links are
/// massless; each joint carries a reflected rotor inertia. Joint angles are
/// measured about the body `+y` axis with zero meaning the link points
/// straight down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    /// kg
    pub trunk_mass: f64,
    /// Diagonal body-frame inertia, kg·m².
    pub trunk_inertia: [f64; 3],
    /// Half extents of the trunk box, m. Used for ground-contact termination.
    pub trunk_half_extents: [f64; 3],
    /// Hip positions in the body frame, m, in [`Leg::ALL`] order.
    pub hip_offsets: [[f64; 3]; LEGS],
    /// Upper and lower link lengths, m.
    pub link_lengths: [f64; 2],
    /// kg·m² per joint.
    pub joint_reflected_inertia: [f64; JOINTS],
    /// m
    pub foot_radius: f64,
    /// Nominal joint configuration `q0`, rad.
    pub default_pose: [f64; JOINTS],
    /// Per-joint `[min, max]`, rad.
    pub joint_limits: [[f64; 2]; JOINTS],
    /// N·m, symmetric.
    pub torque_limit: f64,
    /// m/s², magnitude.
    pub gravity: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let hip = [-1.7, 1.7];
        let knee = [-2.9, 2.9];
        Self {
            trunk_mass: 2.0,
            trunk_inertia: [0.006, 0.022, 0.025],
            trunk_half_extents: [0.2, 0.08, 0.035],
            hip_offsets: [[0.195, 0.1, 0.0], [0.195, -0.1, 0.0], [-0.195, 0.1, 0.0], [-0.195, -0.1, 0.0]],
            link_lengths: [0.16, 0.16],
            joint_reflected_inertia: [0.002; JOINTS],
            foot_radius: 0.015,
            // front knees bend backwards, hind knees forwards
            default_pose: [0.8, -1.6, 0.8, -1.6, -0.8, 1.6, -0.8, 1.6],
            joint_limits: [hip, knee, hip, knee, hip, knee, hip, knee],
            torque_limit: 2.5,
            gravity: 9.81,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidModel(msg));
        if !(self.trunk_mass > 0.0) {
            return invalid(format!("trunk_mass must be positive, got {}", self.trunk_mass));
        }
        if self.trunk_inertia.iter().any(|&i| !(i > 0.0)) {
            return invalid("trunk_inertia entries must be positive".into());
        }
        if self.trunk_half_extents.iter().any(|&e| !(e > 0.0)) {
            return invalid("trunk_half_extents entries must be positive".into());
        }
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return invalid("link_lengths must be positive".into());
        }
        if self.joint_reflected_inertia.iter().any(|&i| !(i > 0.0)) {
            return invalid("joint_reflected_inertia must be positive".into());
        }
        if !(self.foot_radius > 0.0) {
            return invalid("foot_radius must be positive".into());
        }
        if !(self.torque_limit > 0.0) {
            return invalid("torque_limit must be positive".into());
        }
        if !(self.gravity >= 0.0) {
            return invalid("gravity must be non-negative".into());
        }
        for (j, (&q0, lim)) in self.default_pose.iter().zip(&self.joint_limits).enumerate() {
            if !(lim[0] < lim[1]) {
                return invalid(format!("joint {j}: limits [{}, {}] are empty", lim[0], lim[1]));
            }
            if q0 < lim[0] || q0 > lim[1] {
                return invalid(format!("joint {j}: default pose {q0} outside limits"));
            }
        }
        if self.hip_offsets.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("hip_offsets must be finite".into());
        }
        Ok(())
    }

    /// Reads a model from a TOML file. Missing keys fall back to the defaults.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| SimError::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let model: RobotModel = toml::from_str(text).map_err(|e| SimError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Copy of the model with `extra` kg added to the trunk; inertia scales
    /// with the mass ratio.
    pub fn with_added_mass(&self, extra: f64) -> RobotModel {
        let mut m = self.clone();
        let ratio = (self.trunk_mass + extra) / self.trunk_mass;
        m.trunk_mass = self.trunk_mass + extra;
        for i in &mut m.trunk_inertia {
            *i *= ratio;
        }
        m
    }

    pub fn clamp_to_limits(&self, joint: usize, angle: f64) -> f64 {
        let [lo, hi] = self.joint_limits[joint];
        angle.clamp(lo, hi)
    }
}
