use serde::{Deserialize, Serialize};

use super::{Command, EnvConfig, EnvError};
use crate::sim::{RobotState, JOINTS};

pub const OBS_DIM: usize = 30;

/// Policy input, in this order: trunk quaternion `(w, x, y, z)`, joint
/// positions relative to the default pose, scaled joint velocities, previous
/// raw action, command `(vx, wz)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: [f64; OBS_DIM],
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn quaternion(&self) -> &[f64] {
        &self.values[0..4]
    }

    pub fn joint_positions(&self) -> &[f64] {
        &self.values[4..12]
    }

    pub fn joint_velocities(&self) -> &[f64] {
        &self.values[12..20]
    }

    pub fn previous_action(&self) -> &[f64] {
        &self.values[20..28]
    }

    pub fn command(&self) -> &[f64] {
        &self.values[28..30]
    }
}

/// Assembles the observation.
///
/// The quaternion sign is chosen with `w ≥ 0` so equal orientations map to
/// equal inputs.
pub fn build_observation(
    cfg: &EnvConfig,
    state: &RobotState,
    prev_action: &[f64; JOINTS],
    cmd: &Command,
) -> Result<Observation, EnvError> {
    if !state.is_finite() {
        return Err(EnvError::InvalidState("non-finite robot state".into()));
    }
    let o = state.trunk_orientation;
    let sign = if o.w < 0.0 { -1.0 } else { 1.0 };
    let mut v = [0.0; OBS_DIM];
    v[0] = sign * o.w;
    v[1] = sign * o.i;
    v[2] = sign * o.j;
    v[3] = sign * o.k;
    for j in 0..JOINTS {
        v[4 + j] = state.q[j] - cfg.model.default_pose[j];
        v[12 + j] = state.qd[j] * cfg.joint_velocity_scale;
        v[20 + j] = prev_action[j];
    }
    v[28] = cmd.vx;
    v[29] = cmd.wz;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EnvError::InvalidState("non-finite observation input".into()));
    }
    Ok(Observation { values: v })
}
