use nalgebra::{Matrix3x2, Vector3};

use super::model::RobotModel;
use super::state::RobotState;
use super::LEGS;

/// World-frame kinematics of one foot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootKinematics {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Foot position relative to the trunk origin, body frame.
    pub body_offset: Vector3<f64>,
    /// d(body_offset)/d(hip, knee).
    pub leg_jacobian: Matrix3x2<f64>,
}

/// Planar two-link chain: foot position relative to the hip in the body x-z
/// plane and its Jacobian with respect to (hip, knee).
pub fn leg_chain(lengths: [f64; 2], hip: f64, knee: f64) -> (Vector3<f64>, Matrix3x2<f64>) {
    let [l1, l2] = lengths;
    let (s1, c1) = hip.sin_cos();
    let (s12, c12) = (hip + knee).sin_cos();
    let x = -l1 * s1 - l2 * s12;
    let z = -l1 * c1 - l2 * c12;
    #[rustfmt::skip]
    let jac = Matrix3x2::new(
        -l1 * c1 - l2 * c12, -l2 * c12,
        0.0, 0.0,
        l1 * s1 + l2 * s12, l2 * s12,
    );
    (Vector3::new(x, 0.0, z), jac)
}

pub fn forward_kinematics(model: &RobotModel, state: &RobotState) -> [FootKinematics; LEGS] {
    let rot = state.rotation();
    let omega = state.trunk_angular_velocity;
    std::array::from_fn(|leg| {
        let (hip, knee) = (state.q[2 * leg], state.q[2 * leg + 1]);
        let (rel, jac) = leg_chain(model.link_lengths, hip, knee);
        let hip_offset = Vector3::from(model.hip_offsets[leg]);
        let r = hip_offset + rel;
        let qd = nalgebra::Vector2::new(state.qd[2 * leg], state.qd[2 * leg + 1]);
        let body_vel = omega.cross(&r) + jac * qd;
        FootKinematics {
            position: state.trunk_position + rot.transform_vector(&r),
            velocity: state.trunk_linear_velocity + rot.transform_vector(&body_vel),
            body_offset: r,
            leg_jacobian: jac,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_pose_feet_level() {
        let model = RobotModel::default();
        let state = RobotState::standing(&model, model.default_pose);
        let feet = forward_kinematics(&model, &state);
        for f in &feet {
            assert!((f.position.z - feet[0].position.z).abs() < 1e-12);
            assert!((f.position.z - model.foot_radius).abs() < 1e-12);
        }
    }

    #[test]
    fn extended_leg_hangs_below_hip() {
        let model = RobotModel::default();
        let state = RobotState::at_rest(1.0, [0.0; 8]);
        let feet = forward_kinematics(&model, &state);
        for (leg, f) in feet.iter().enumerate() {
            let hip = model.hip_offsets[leg];
            assert!((f.position.x - hip[0]).abs() < 1e-12);
            assert!((f.position.y - hip[1]).abs() < 1e-12);
            assert!((f.position.z - (1.0 - 0.32)).abs() < 1e-12);
        }
    }

    // Velocity from the chain rule against a central difference of positions.
    #[test]
    fn velocity_matches_finite_difference() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut s = RobotState::at_rest(0.3, [0.0; 8]);
            for j in 0..8 {
                s.q[j] = rng.random_range(-1.5..1.5);
                s.qd[j] = rng.random_range(-5.0..5.0);
            }
            let axis = nalgebra::Vector3::new(rng.random(), rng.random(), rng.random::<f64>());
            s.trunk_orientation = *UnitQuaternion::from_scaled_axis(axis * 0.5).quaternion();
            s.trunk_linear_velocity = nalgebra::Vector3::new(0.3, -0.2, 0.1);
            s.trunk_angular_velocity = nalgebra::Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let h = 1e-6;
            let shifted = |sign: f64| {
                let mut t = s.clone();
                t.trunk_position += s.trunk_linear_velocity * (sign * h);
                let rot = UnitQuaternion::from_scaled_axis(s.trunk_angular_velocity * (sign * h));
                t.trunk_orientation = *(s.rotation() * rot).quaternion();
                for j in 0..8 {
                    t.q[j] += s.qd[j] * sign * h;
                }
                forward_kinematics(&model, &t)
            };
            let plus = shifted(1.0);
            let minus = shifted(-1.0);
            let analytic = forward_kinematics(&model, &s);
            for leg in 0..4 {
                let fd = (plus[leg].position - minus[leg].position) / (2.0 * h);
                let err = (fd - analytic[leg].velocity).amax();
                assert!(err < 1e-5, "leg {leg}: fd error {err}");
            }
        }
    }
}
