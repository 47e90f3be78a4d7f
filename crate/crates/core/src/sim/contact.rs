use super::kinematics::FootKinematics;
use super::model::RobotModel;
use super::state::{ContactParams, ContactState, FootContact};
use super::LEGS;

/// Explicit penalty-contact forces against the flat ground `z = 0`.
///
/// Normal force is a spring-damper on the penetration `d = r − z`, clamped at
/// zero; tangential force is viscous and saturates at the friction cone. The
/// filtered indicator is a first-order low-pass of the raw contact flag.
pub fn contact_forces(
    model: &RobotModel,
    params: &ContactParams,
    feet: &[FootKinematics; LEGS],
    prior: &ContactState,
    dt: f64,
) -> ContactState {
    let alpha = filter_gain(params, dt);
    let feet = std::array::from_fn(|i| {
        let foot = &feet[i];
        let depth = model.foot_radius - foot.position.z;
        let in_contact = depth > 0.0;
        let (normal, tangential) = if in_contact {
            let normal = (params.stiffness * depth - params.damping * foot.velocity.z).max(0.0);
            let t = [-params.tangential_damping * foot.velocity.x, -params.tangential_damping * foot.velocity.y];
            (normal, saturate(t, params.friction * normal))
        } else {
            (0.0, [0.0, 0.0])
        };
        let flag = if in_contact { 1.0 } else { 0.0 };
        let prev = prior.feet[i].filtered;
        FootContact {
            in_contact,
            filtered: (prev + alpha * (flag - prev)).clamp(0.0, 1.0),
            normal_force: normal,
            tangential_force: tangential,
            position: foot.position,
            velocity: foot.velocity,
        }
    });
    ContactState { feet }
}

pub(crate) fn filter_gain(params: &ContactParams, dt: f64) -> f64 {
    1.0 - (-dt / params.filter_time_constant).exp()
}

fn saturate(t: [f64; 2], bound: f64) -> [f64; 2] {
    let mag = t[0].hypot(t[1]);
    if mag > bound {
        let s = if mag > 0.0 { bound / mag } else { 0.0 };
        [t[0] * s, t[1] * s]
    } else {
        t
    }
}
