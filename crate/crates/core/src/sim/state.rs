use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::model::{Leg, RobotModel};
use super::{SimError, JOINTS, LEGS};

/// Ground truth of the simulated robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// World frame, m.
    pub trunk_position: Vector3<f64>,
    /// World-from-body rotation, kept at unit norm.
    pub trunk_orientation: Quaternion<f64>,
    /// World frame, m/s.
    pub trunk_linear_velocity: Vector3<f64>,
    /// Body frame, rad/s.
    pub trunk_angular_velocity: Vector3<f64>,
    pub q: [f64; JOINTS],
    pub qd: [f64; JOINTS],
    /// s
    pub time: f64,
}

impl RobotState {
    /// Level trunk at `height`, joints at `q`, everything at rest.
    pub fn at_rest(height: f64, q: [f64; JOINTS]) -> Self {
        Self {
            trunk_position: Vector3::new(0.0, 0.0, height),
            trunk_orientation: Quaternion::identity(),
            trunk_linear_velocity: Vector3::zeros(),
            trunk_angular_velocity: Vector3::zeros(),
            q,
            qd: [0.0; JOINTS],
            time: 0.0,
        }
    }

    /// Standing configuration: joints at `q`, trunk lowered until the lowest
    /// foot just touches the ground.
    pub fn standing(model: &RobotModel, q: [f64; JOINTS]) -> Self {
        let mut state = Self::at_rest(0.0, q);
        let feet = super::kinematics::forward_kinematics(model, &state);
        let lowest = feet.iter().map(|f| f.position.z).fold(f64::INFINITY, f64::min);
        state.trunk_position.z = model.foot_radius - lowest;
        state
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(self.trunk_orientation)
    }

    pub fn is_finite(&self) -> bool {
        let o = &self.trunk_orientation;
        self.trunk_position.iter().all(|v| v.is_finite())
            && [o.w, o.i, o.j, o.k].iter().all(|v| v.is_finite())
            && self.trunk_linear_velocity.iter().all(|v| v.is_finite())
            && self.trunk_angular_velocity.iter().all(|v| v.is_finite())
            && self.q.iter().chain(&self.qd).all(|v| v.is_finite())
            && self.time.is_finite()
    }

    /// (roll, pitch, yaw) of the trunk, rad.
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        self.rotation().euler_angles()
    }

    /// Gravity direction expressed in the body frame (unit vector).
    pub fn projected_gravity(&self) -> Vector3<f64> {
        self.rotation().inverse_transform_vector(&Vector3::new(0.0, 0.0, -1.0))
    }

    /// Trunk linear velocity in the body frame.
    pub fn body_linear_velocity(&self) -> Vector3<f64> {
        self.rotation().inverse_transform_vector(&self.trunk_linear_velocity)
    }

    /// Trunk angular velocity in the world frame.
    pub fn world_angular_velocity(&self) -> Vector3<f64> {
        self.rotation().transform_vector(&self.trunk_angular_velocity)
    }
}

/// Joint PD gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    pub kp: [f64; JOINTS],
    pub kd: [f64; JOINTS],
}

impl Default for PdGains {
    fn default() -> Self {
        Self::uniform(3.0, 0.3)
    }
}

impl PdGains {
    pub fn uniform(kp: f64, kd: f64) -> Self {
        Self { kp: [kp; JOINTS], kd: [kd; JOINTS] }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.kp.iter().any(|&k| !(k > 0.0)) || self.kd.iter().any(|&k| !(k >= 0.0)) {
            return Err(SimError::InvalidModel("PD gains require kp > 0 and kd >= 0".into()));
        }
        Ok(())
    }
}

/// Health status of one leg.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegStatus {
    #[default]
    Health,
    /// Joint mechanically frozen at its onset angle.
    Limit,
    /// Joint produces no actuator torque.
    Weak,
}

impl LegStatus {
    pub const ALL: [LegStatus; 3] = [LegStatus::Health, LegStatus::Limit, LegStatus::Weak];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<LegStatus> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LegStatus::Health => "health",
            LegStatus::Limit => "limit",
            LegStatus::Weak => "weak",
        }
    }
}

impl std::fmt::Display for LegStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LegStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "health" | "healthy" => Ok(LegStatus::Health),
            "limit" | "lock" | "locked" => Ok(LegStatus::Limit),
            "weak" | "power_loss" => Ok(LegStatus::Weak),
            other => Err(format!("unknown leg status `{other}`")),
        }
    }
}

/// How a locked joint is realised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockMode {
    /// Kinematic constraint: position frozen, velocity zero.
    #[default]
    Hard,
    /// High-gain PD hold toward the lock angle (gains scaled by the multiplier).
    StiffPd,
}

/// Per-leg fault bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultState {
    pub leg_status: [LegStatus; LEGS],
    /// `[hip, knee]` mask of joints affected by the fault on each leg.
    pub affected_joints: [[bool; 2]; LEGS],
    /// Captured at Limit onset; `None` unless the leg is Limit.
    pub lock_angles: [Option<[f64; 2]>; LEGS],
    /// Time of the most recent status change, s.
    pub onset_time: Option<f64>,
    pub lock_mode: LockMode,
    pub lock_gain: f64,
}

impl Default for FaultState {
    fn default() -> Self {
        Self::healthy()
    }
}

impl FaultState {
    pub fn healthy() -> Self {
        Self {
            leg_status: [LegStatus::Health; LEGS],
            affected_joints: [[true, true]; LEGS],
            lock_angles: [None; LEGS],
            onset_time: None,
            lock_mode: LockMode::Hard,
            lock_gain: 10.0,
        }
    }

    /// Sets `leg` to `status`, leaving every other leg healthy.
    ///
    /// A Limit onset captures the current joint angles; re-asserting Limit on a
    /// leg that is already locked keeps the original lock angles.
    pub fn set_status(&mut self, leg: Leg, status: LegStatus, state: &RobotState) {
        let li = leg.index();
        for other in Leg::ALL {
            if other != leg && self.leg_status[other.index()] != LegStatus::Health {
                self.leg_status[other.index()] = LegStatus::Health;
                self.lock_angles[other.index()] = None;
            }
        }
        if self.leg_status[li] == status {
            return;
        }
        self.leg_status[li] = status;
        self.lock_angles[li] = match status {
            LegStatus::Limit => {
                let [h, k] = leg.joints();
                Some([state.q[h], state.q[k]])
            }
            _ => None,
        };
        self.onset_time = Some(state.time);
    }

    pub fn clear(&mut self, state: &RobotState) {
        if self.faulty_leg().is_some() {
            self.onset_time = Some(state.time);
        }
        self.leg_status = [LegStatus::Health; LEGS];
        self.lock_angles = [None; LEGS];
    }

    /// The single non-healthy leg, if any.
    pub fn faulty_leg(&self) -> Option<(Leg, LegStatus)> {
        Leg::ALL.iter().map(|&l| (l, self.leg_status[l.index()])).find(|(_, s)| *s != LegStatus::Health)
    }

    /// Overall status label: the status of the faulty leg, or Health.
    pub fn status(&self) -> LegStatus {
        self.faulty_leg().map_or(LegStatus::Health, |(_, s)| s)
    }

    /// Status governing joint `j`: Health unless the joint is affected on a faulty leg.
    pub fn joint_status(&self, j: usize) -> LegStatus {
        let leg = j / 2;
        if self.affected_joints[leg][j % 2] {
            self.leg_status[leg]
        } else {
            LegStatus::Health
        }
    }

    /// Lock angle of joint `j` when it is Limit-faulted.
    pub fn lock_angle(&self, j: usize) -> Option<f64> {
        if self.joint_status(j) == LegStatus::Limit {
            self.lock_angles[j / 2].map(|a| a[j % 2])
        } else {
            None
        }
    }

    /// True when joint `j` is kinematically frozen.
    pub fn is_hard_locked(&self, j: usize) -> bool {
        self.lock_mode == LockMode::Hard && self.lock_angle(j).is_some()
    }

    pub fn check_invariants(&self) -> Result<(), SimError> {
        let faulty = self.leg_status.iter().filter(|s| **s != LegStatus::Health).count();
        if faulty > 1 {
            return Err(SimError::InvalidFault("more than one faulty leg".into()));
        }
        for l in 0..LEGS {
            let locked = self.leg_status[l] == LegStatus::Limit;
            if locked != self.lock_angles[l].is_some() {
                return Err(SimError::InvalidFault(format!("leg {l}: lock angles inconsistent")));
            }
        }
        Ok(())
    }
}

/// Ground interaction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub stiffness: f64,
    /// Normal damping, N·s/m.
    pub damping: f64,
    /// Tangential viscous coefficient, N·s/m.
    pub tangential_damping: f64,
    /// Coulomb friction coefficient.
    pub friction: f64,
    /// Time constant of the contact indicator filter, s.
    pub filter_time_constant: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 5000.0, damping: 50.0, tangential_damping: 300.0, friction: 1.0, filter_time_constant: 0.04 }
    }
}

/// Contact of a single foot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FootContact {
    pub in_contact: bool,
    /// Filtered contact indicator in `[0, 1]`.
    pub filtered: f64,
    /// N, never negative.
    pub normal_force: f64,
    /// World xy, N.
    pub tangential_force: [f64; 2],
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl FootContact {
    pub fn tangential_magnitude(&self) -> f64 {
        self.tangential_force[0].hypot(self.tangential_force[1])
    }

    pub fn force(&self) -> Vector3<f64> {
        Vector3::new(self.tangential_force[0], self.tangential_force[1], self.normal_force)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub feet: [FootContact; LEGS],
}

/// Aggregates of one 20 ms control tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    /// Mean applied torque over the tick, N·m.
    pub mean_torque: [f64; JOINTS],
    /// Contact state at the end of the tick.
    pub contacts: ContactState,
    /// Mean forward (world x) foot speed over the tick, m/s.
    pub foot_forward_speed: [f64; LEGS],
    /// Mean world-xy foot velocity over the tick, m/s.
    pub foot_plane_velocity: [[f64; 2]; LEGS],
    /// Raw contact flags sampled at every PD update (200 Hz).
    pub contact_samples: [[bool; LEGS]; super::PD_UPDATES_PER_TICK],
    /// Mean trunk velocity in the body frame over the tick, m/s.
    pub mean_body_velocity: Vector3<f64>,
    /// Mean world yaw rate over the tick, rad/s.
    pub mean_yaw_rate: f64,
    /// Trunk displacement over the tick, world frame, m.
    pub trunk_displacement: Vector3<f64>,
}
