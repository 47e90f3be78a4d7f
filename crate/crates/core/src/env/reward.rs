use serde::{Deserialize, Serialize};

use super::{Command, EnvError};
use crate::sim::{RobotModel, RobotState, TickReport, JOINTS, LEGS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Desired foot-center height during swing, m.
    pub foot_height_target: f64,
    pub clearance_weight: f64,
    pub slip_weight: f64,
    pub linear_tracking_weight: f64,
    pub yaw_tracking_weight: f64,
    /// Width of the exponential tracking kernels, (m/s)² and (rad/s)².
    pub tracking_sigma_sq: f64,
    pub torque_weight: f64,
    pub action_rate_weight: f64,
    pub orientation_weight: f64,
    pub joint_limit_weight: f64,
    /// Fraction of each joint range, centered, inside which no limit penalty applies.
    pub soft_limit_fraction: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            foot_height_target: 0.06,
            clearance_weight: -0.3,
            slip_weight: -0.1,
            linear_tracking_weight: 1.0,
            yaw_tracking_weight: 0.5,
            tracking_sigma_sq: 0.25,
            torque_weight: -1e-4,
            action_rate_weight: -0.01,
            orientation_weight: -0.2,
            joint_limit_weight: -1.0,
            soft_limit_fraction: 0.9,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let penalties = [
            ("clearance_weight", self.clearance_weight),
            ("slip_weight", self.slip_weight),
            ("torque_weight", self.torque_weight),
            ("action_rate_weight", self.action_rate_weight),
            ("orientation_weight", self.orientation_weight),
            ("joint_limit_weight", self.joint_limit_weight),
        ];
        for (name, w) in penalties {
            if !(w <= 0.0) {
                return Err(EnvError::Config(format!("{name} must be ≤ 0")));
            }
        }
        if !(self.linear_tracking_weight > 0.0 && self.yaw_tracking_weight > 0.0 && self.tracking_sigma_sq > 0.0) {
            return Err(EnvError::Config("tracking weights and width must be positive".into()));
        }
        if !(self.soft_limit_fraction > 0.0 && self.soft_limit_fraction <= 1.0) {
            return Err(EnvError::Config("soft_limit_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Training progress driving the penalty ramp `i / N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub iteration: usize,
    pub total: usize,
}

impl CurriculumState {
    pub fn new(iteration: usize, total: usize) -> Self {
        Self { iteration: iteration.min(total), total }
    }

    /// Fully ramped, as used outside training.
    pub fn complete() -> Self {
        Self { iteration: 1, total: 1 }
    }

    pub fn penalty_scale(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.iteration.min(self.total) as f64 / self.total as f64
        }
    }
}

/// Per-term breakdown of one tick's reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub clearance: f64,
    pub slip: f64,
    pub linear_tracking: f64,
    pub yaw_tracking: f64,
    pub torque: f64,
    pub action_rate: f64,
    pub orientation: f64,
    pub joint_limit: f64,
    /// Sum of the penalty terms.
    pub penalty: f64,
    /// Sum of the positive terms.
    pub reward: f64,
    /// `max(scale · penalty + reward, 0)`.
    pub total: f64,
}

/// Action-dependent inputs to the reward.
#[derive(Clone, Copy, Debug)]
pub struct RewardContext<'a> {
    pub model: &'a RobotModel,
    pub action: &'a [f64; JOINTS],
    pub prev_action: &'a [f64; JOINTS],
}

/// Foot clearance: `c · Σ_j |p_z,j − p_z^m| · √|p_x,j|`.
pub fn clearance_term(heights: &[f64; LEGS], forward_speeds: &[f64; LEGS], cfg: &RewardConfig) -> f64 {
    cfg.clearance_weight
        * heights
            .iter()
            .zip(forward_speeds)
            .map(|(z, vx)| (z - cfg.foot_height_target).abs() * vx.abs().sqrt())
            .sum::<f64>()
}

/// Foot slip: `c · Σ_j I_j · ‖v_xy,j‖²`.
pub fn slip_term(indicators: &[f64; LEGS], plane_velocities: &[[f64; 2]; LEGS], cfg: &RewardConfig) -> f64 {
    cfg.slip_weight * indicators.iter().zip(plane_velocities).map(|(i, v)| i * (v[0] * v[0] + v[1] * v[1])).sum::<f64>()
}

pub fn compute_reward(
    report: &TickReport,
    state: &RobotState,
    cmd: &Command,
    ctx: &RewardContext<'_>,
    cfg: &RewardConfig,
    cur: &CurriculumState,
) -> RewardTerms {
    let feet = &report.contacts.feet;
    let heights = std::array::from_fn(|j| feet[j].position.z);
    let indicators = std::array::from_fn(|j| feet[j].filtered);
    let clearance = clearance_term(&heights, &report.foot_forward_speed, cfg);
    let slip = slip_term(&indicators, &report.foot_plane_velocity, cfg);

    let vx_err = report.mean_body_velocity.x - cmd.vx;
    let wz_err = report.mean_yaw_rate - cmd.wz;
    let linear_tracking = cfg.linear_tracking_weight * (-vx_err * vx_err / cfg.tracking_sigma_sq).exp();
    let yaw_tracking = cfg.yaw_tracking_weight * (-wz_err * wz_err / cfg.tracking_sigma_sq).exp();

    let torque = cfg.torque_weight * report.mean_torque.iter().map(|t| t * t).sum::<f64>();
    let action_rate =
        cfg.action_rate_weight * ctx.action.iter().zip(ctx.prev_action).map(|(a, p)| (a - p) * (a - p)).sum::<f64>();
    let g = state.projected_gravity();
    let orientation = cfg.orientation_weight * (g.x * g.x + g.y * g.y);
    let joint_limit = cfg.joint_limit_weight * soft_limit_excess(ctx.model, &state.q, cfg.soft_limit_fraction);

    let penalty = clearance + slip + torque + action_rate + orientation + joint_limit;
    let reward = linear_tracking + yaw_tracking;
    let total = (cur.penalty_scale() * penalty + reward).max(0.0);
    RewardTerms {
        clearance,
        slip,
        linear_tracking,
        yaw_tracking,
        torque,
        action_rate,
        orientation,
        joint_limit,
        penalty,
        reward,
        total,
    }
}

/// Σ over joints of how far each angle lies outside the centered soft range.
fn soft_limit_excess(model: &RobotModel, q: &[f64; JOINTS], fraction: f64) -> f64 {
    (0..JOINTS)
        .map(|j| {
            let [lo, hi] = model.joint_limits[j];
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo) * fraction;
            ((q[j] - mid).abs() - half).max(0.0)
        })
        .sum()
}
