use super::model::RobotModel;
use super::state::{FaultState, LegStatus, LockMode, PdGains, RobotState};
use super::{SimError, JOINTS};

/// Joint torques from the PD law `τ = kp (q0 + a − q) − kd q̇`.
///
/// `action` holds target offsets from the default pose in radians. Output is
/// clamped to the torque limit. Weak joints output exactly zero; Limit joints
/// output a hold torque toward their lock angle with gains scaled by the
/// fault's lock-gain multiplier.
pub fn pd_torque(
    gains: &PdGains,
    model: &RobotModel,
    action: &[f64; JOINTS],
    state: &RobotState,
    fault: &FaultState,
) -> Result<[f64; JOINTS], SimError> {
    if let Some(j) = action.iter().position(|a| !a.is_finite()) {
        return Err(SimError::InvalidAction(format!("action[{j}] = {}", action[j])));
    }
    let limit = model.torque_limit;
    Ok(std::array::from_fn(|j| match fault.joint_status(j) {
        LegStatus::Weak => 0.0,
        LegStatus::Limit => lock_hold_torque(gains, model, state, fault, j),
        LegStatus::Health => {
            let target = model.default_pose[j] + action[j];
            (gains.kp[j] * (target - state.q[j]) - gains.kd[j] * state.qd[j]).clamp(-limit, limit)
        }
    }))
}

pub(crate) fn lock_hold_torque(
    gains: &PdGains,
    model: &RobotModel,
    state: &RobotState,
    fault: &FaultState,
    j: usize,
) -> f64 {
    let lock = fault.lock_angle(j).unwrap_or(state.q[j]);
    let g = fault.lock_gain;
    let limit = model.torque_limit;
    (g * gains.kp[j] * (lock - state.q[j]) - g * gains.kd[j] * state.qd[j]).clamp(-limit, limit)
}

/// True when joint `j` needs its hold torque refreshed every physics substep.
pub(crate) fn needs_substep_hold(fault: &FaultState, j: usize) -> bool {
    fault.lock_mode == LockMode::StiffPd && fault.lock_angle(j).is_some()
}
