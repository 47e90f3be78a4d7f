use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::contact::contact_forces;
use super::integrate::integrate_substep;
use super::kinematics::forward_kinematics;
use super::model::RobotModel;
use super::pd::{lock_hold_torque, needs_substep_hold, pd_torque};
use super::state::{ContactParams, ContactState, FaultState, PdGains, RobotState, TickReport};
use super::{SimError, JOINTS, LEGS, PD_UPDATES_PER_TICK, SUBSTEPS_PER_PD, SUBSTEP_DT};

/// Robot, PD gains and ground parameters bundled for stepping.
///
/// Every method is a pure function of its arguments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulator {
    pub model: RobotModel,
    pub gains: PdGains,
    pub contact: ContactParams,
}

impl Simulator {
    pub fn new(model: RobotModel, gains: PdGains, contact: ContactParams) -> Result<Self, SimError> {
        model.validate()?;
        gains.validate()?;
        Ok(Self { model, gains, contact })
    }

    /// One 20 ms policy tick: 4 PD updates, each held for 5 substeps of 1 ms.
    ///
    /// `action` is the joint target offset from the default pose, rad.
    pub fn simulate_control_tick(
        &self,
        state: &RobotState,
        contacts: &ContactState,
        action: &[f64; JOINTS],
        fault: &FaultState,
    ) -> Result<(RobotState, TickReport), SimError> {
        let dt = SUBSTEP_DT;
        let substeps = (PD_UPDATES_PER_TICK * SUBSTEPS_PER_PD) as f64;
        let start = state.trunk_position;
        let mut state = state.clone();
        let mut contacts = contacts.clone();
        let mut torque_sum = [0.0; JOINTS];
        let mut fwd_speed = [0.0; LEGS];
        let mut plane_vel = [[0.0; 2]; LEGS];
        let mut body_vel = Vector3::zeros();
        let mut yaw_rate = 0.0;
        let mut contact_samples = [[false; LEGS]; PD_UPDATES_PER_TICK];

        for update in 0..PD_UPDATES_PER_TICK {
            let mut torque = pd_torque(&self.gains, &self.model, action, &state, fault)?;
            for sub in 0..SUBSTEPS_PER_PD {
                if sub > 0 {
                    for j in 0..JOINTS {
                        if needs_substep_hold(fault, j) {
                            torque[j] = lock_hold_torque(&self.gains, &self.model, &state, fault, j);
                        }
                    }
                }
                let feet = forward_kinematics(&self.model, &state);
                let explicit = contact_forces(&self.model, &self.contact, &feet, &contacts, dt);
                let (next, applied) =
                    integrate_substep(&self.model, &self.contact, &state, &torque, &explicit, fault, dt)?;
                state = next;
                contacts = applied;
                for j in 0..JOINTS {
                    torque_sum[j] += torque[j];
                }
                for (leg, foot) in feet.iter().enumerate() {
                    fwd_speed[leg] += foot.velocity.x;
                    plane_vel[leg][0] += foot.velocity.x;
                    plane_vel[leg][1] += foot.velocity.y;
                }
                body_vel += state.body_linear_velocity();
                yaw_rate += state.world_angular_velocity().z;
            }
            // sample at the end of each 5 ms PD period
            for leg in 0..LEGS {
                contact_samples[update][leg] = contacts.feet[leg].in_contact;
            }
        }

        let report = TickReport {
            mean_torque: torque_sum.map(|t| t / substeps),
            contacts,
            foot_forward_speed: fwd_speed.map(|v| v / substeps),
            foot_plane_velocity: plane_vel.map(|[x, y]| [x / substeps, y / substeps]),
            contact_samples,
            mean_body_velocity: body_vel / substeps,
            mean_yaw_rate: yaw_rate / substeps,
            trunk_displacement: state.trunk_position - start,
        };
        Ok((state, report))
    }
}
