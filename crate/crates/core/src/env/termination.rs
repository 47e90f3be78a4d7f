use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::sim::{RobotModel, RobotState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Running,
    /// The robot fell or the simulation diverged.
    Death,
    /// The final step was reached without falling.
    Survival,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Termination::Running
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    /// Death below this trunk height (strict), m.
    pub min_height: f64,
    /// Death when |roll| or |pitch| exceeds this (strict), rad.
    pub max_tilt: f64,
    /// Death when any corner of the trunk box reaches the ground.
    pub trunk_ground_contact: bool,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self { min_height: 0.08, max_tilt: 1.0, trunk_ground_contact: true }
    }
}

/// True when a corner of the trunk box is at or below `z = 0`.
pub fn trunk_touches_ground(model: &RobotModel, state: &RobotState) -> bool {
    let rot = state.rotation();
    let [hx, hy, hz] = model.trunk_half_extents;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let corner = rot.transform_vector(&Vector3::new(sx * hx, sy * hy, sz * hz));
                if state.trunk_position.z + corner.z <= 0.0 {
                    return true;
                }
            }
        }
    }
    false
}

/// Classifies the state reached after `step` ticks of an episode lasting
/// `episode_steps` ticks.
pub fn check_termination(
    cfg: &TerminationConfig,
    model: &RobotModel,
    state: &RobotState,
    step: usize,
    episode_steps: usize,
) -> Termination {
    if !state.is_finite() {
        return Termination::Death;
    }
    let (roll, pitch, _) = state.euler_angles();
    let fallen = state.trunk_position.z < cfg.min_height
        || roll.abs() > cfg.max_tilt
        || pitch.abs() > cfg.max_tilt
        || (cfg.trunk_ground_contact && trunk_touches_ground(model, state));
    if fallen {
        Termination::Death
    } else if step >= episode_steps {
        Termination::Survival
    } else {
        Termination::Running
    }
}
