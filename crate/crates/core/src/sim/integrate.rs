use nalgebra::{Matrix2, Matrix3, Quaternion, SMatrix, SVector, Vector2, Vector3};

use super::kinematics::forward_kinematics;
use super::model::RobotModel;
use super::state::{ContactParams, ContactState, FaultState, RobotState};
use super::{SimError, JOINTS, LEGS};

type Matrix6 = SMatrix<f64, 6, 6>;
type Matrix6x2 = SMatrix<f64, 6, 2>;
type Matrix2x6 = SMatrix<f64, 2, 6>;
type Matrix3x6 = SMatrix<f64, 3, 6>;
type Vector6 = SVector<f64, 6>;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    Off,
    Stick,
    /// Sliding along the unit slip direction.
    Slide([f64; 2]),
}

// Each foot can only move Stick -> Slide -> Off, so this bounds the loop.
const MAX_MODE_PASSES: usize = 2 * LEGS + 1;

/// Advances the robot by one physics substep.
///
/// Linearly-implicit Euler on the generalized velocity
/// `u = (v_world, ω_body, q̇)`: the viscous parts of every active contact are
/// evaluated at the end-of-step velocity, which keeps the stiff
/// contact/rotor coupling stable at 1 ms. Foot contact modes (stick, slide,
/// separate) are resolved by a small active-set loop so the applied forces
/// satisfy `F_n ≥ 0` and `|F_t| ≤ μ F_n`. Positions are then advanced with the
/// new velocities (semi-implicit), the quaternion renormalized, joints
/// clamped to their limits and hard-locked joints pinned to their lock angle.
///
/// `contacts` seeds the active set and carries the filtered indicators; the
/// returned contact state holds the forces actually applied.
pub fn integrate_substep(
    model: &RobotModel,
    params: &ContactParams,
    state: &RobotState,
    torque: &[f64; JOINTS],
    contacts: &ContactState,
    fault: &FaultState,
    dt: f64,
) -> Result<(RobotState, ContactState), SimError> {
    let rot = state.rotation().to_rotation_matrix().into_inner();
    let feet = forward_kinematics(model, state);
    let mass = model.trunk_mass;
    let inertia = Vector3::from(model.trunk_inertia);
    let omega = state.trunk_angular_velocity;

    // Unconstrained part of the system.
    let mut base_tt = Matrix6::zeros();
    let mut base_bt = Vector6::zeros();
    for k in 0..3 {
        base_tt[(k, k)] = mass;
        base_tt[(k + 3, k + 3)] = inertia[k];
        base_bt[k] = mass * state.trunk_linear_velocity[k];
        base_bt[k + 3] = inertia[k] * omega[k];
    }
    base_bt[2] -= dt * mass * model.gravity;
    let gyro = omega.cross(&inertia.component_mul(&omega));
    for k in 0..3 {
        base_bt[k + 3] -= dt * gyro[k];
    }

    let jt: [Matrix3x6; LEGS] = std::array::from_fn(|i| {
        let mut m = Matrix3x6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rot * feet[i].body_offset.cross_matrix()));
        m
    });
    let jl: [SMatrix<f64, 3, 2>; LEGS] = std::array::from_fn(|i| rot * feet[i].leg_jacobian);
    let depth: [f64; LEGS] = std::array::from_fn(|i| model.foot_radius - feet[i].position.z);

    let mut modes: [Mode; LEGS] =
        std::array::from_fn(|i| if contacts.feet[i].in_contact && depth[i] > 0.0 { Mode::Stick } else { Mode::Off });

    let locked: [bool; JOINTS] = std::array::from_fn(|j| fault.is_hard_locked(j));
    let mu = params.friction;

    let mut solution;
    let mut pass = 0;
    loop {
        pass += 1;
        let mut a_tt = base_tt;
        let mut b_t = base_bt;
        let mut a_tl = [Matrix6x2::zeros(); LEGS];
        let mut a_lt = [Matrix2x6::zeros(); LEGS];
        let mut a_ll = [Matrix2::zeros(); LEGS];
        let mut b_l = [Vector2::zeros(); LEGS];
        for leg in 0..LEGS {
            for k in 0..2 {
                let j = 2 * leg + k;
                let ir = model.joint_reflected_inertia[j];
                a_ll[leg][(k, k)] = ir;
                b_l[leg][k] = ir * state.qd[j] + dt * torque[j];
            }
            let Some((c, fs)) = contact_terms(modes[leg], params, depth[leg]) else {
                continue;
            };
            let ct = c * jt[leg];
            let cl = c * jl[leg];
            a_tt += dt * jt[leg].transpose() * ct;
            a_tl[leg] += dt * jt[leg].transpose() * cl;
            a_lt[leg] += dt * jl[leg].transpose() * ct;
            a_ll[leg] += dt * jl[leg].transpose() * cl;
            b_t += dt * jt[leg].transpose() * fs;
            b_l[leg] += dt * jl[leg].transpose() * fs;
        }
        for leg in 0..LEGS {
            for k in 0..2 {
                if locked[2 * leg + k] {
                    a_ll[leg].row_mut(k).fill(0.0);
                    a_ll[leg].column_mut(k).fill(0.0);
                    a_ll[leg][(k, k)] = 1.0;
                    a_lt[leg].row_mut(k).fill(0.0);
                    a_tl[leg].column_mut(k).fill(0.0);
                    b_l[leg][k] = 0.0;
                }
            }
        }

        // Eliminate the per-leg joint blocks and solve the 6x6 trunk system.
        let mut schur = a_tt;
        let mut rhs = b_t;
        let mut inv_ll = [Matrix2::zeros(); LEGS];
        for leg in 0..LEGS {
            inv_ll[leg] = a_ll[leg].try_inverse().ok_or(SimError::Diverged)?;
            let tmp = a_tl[leg] * inv_ll[leg];
            schur -= tmp * a_lt[leg];
            rhs -= tmp * b_l[leg];
        }
        let trunk = schur.lu().solve(&rhs).ok_or(SimError::Diverged)?;
        let legs: [Vector2<f64>; LEGS] = std::array::from_fn(|leg| inv_ll[leg] * (b_l[leg] - a_lt[leg] * trunk));

        let forces: [Vector3<f64>; LEGS] =
            std::array::from_fn(|leg| match contact_terms(modes[leg], params, depth[leg]) {
                Some((c, fs)) => fs - c * (jt[leg] * trunk + jl[leg] * legs[leg]),
                None => Vector3::zeros(),
            });

        let mut changed = false;
        for leg in 0..LEGS {
            let f = forces[leg];
            match modes[leg] {
                Mode::Off => {}
                Mode::Stick | Mode::Slide(_) if f.z < 0.0 => {
                    modes[leg] = Mode::Off;
                    changed = true;
                }
                Mode::Stick => {
                    let ft = f.x.hypot(f.y);
                    if ft > mu * f.z {
                        modes[leg] = Mode::Slide([-f.x / ft, -f.y / ft]);
                        changed = true;
                    }
                }
                Mode::Slide(_) => {}
            }
        }
        solution = (trunk, legs, forces);
        if !changed || pass >= MAX_MODE_PASSES {
            break;
        }
    }

    let (trunk, legs, forces) = solution;
    let mut next = state.clone();
    next.trunk_linear_velocity = Vector3::new(trunk[0], trunk[1], trunk[2]);
    next.trunk_angular_velocity = Vector3::new(trunk[3], trunk[4], trunk[5]);
    next.trunk_position += dt * next.trunk_linear_velocity;
    next.trunk_orientation = integrate_orientation(&state.trunk_orientation, &next.trunk_angular_velocity, dt);
    for leg in 0..LEGS {
        for k in 0..2 {
            let j = 2 * leg + k;
            let mut qd = legs[leg][k];
            if let Some(lock) = fault.lock_angle(j).filter(|_| locked[j]) {
                next.q[j] = lock;
                next.qd[j] = 0.0;
                continue;
            }
            let mut q = state.q[j] + dt * qd;
            let [lo, hi] = model.joint_limits[j];
            if q < lo {
                q = lo;
                qd = qd.max(0.0);
            } else if q > hi {
                q = hi;
                qd = qd.min(0.0);
            }
            next.q[j] = q;
            next.qd[j] = qd;
        }
    }
    next.time = state.time + dt;
    if !next.is_finite() {
        return Err(SimError::Diverged);
    }

    let mut applied = contacts.clone();
    for leg in 0..LEGS {
        let f = forces[leg];
        let foot = &mut applied.feet[leg];
        foot.normal_force = f.z.max(0.0);
        foot.tangential_force = [f.x, f.y];
    }
    Ok((next, applied))
}

/// Damping matrix `C` and constant force `F_s` of an active contact, so that
/// the applied force is `F_s − C v_foot`.
fn contact_terms(mode: Mode, params: &ContactParams, depth: f64) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let (k, c, kt, mu) = (params.stiffness, params.damping, params.tangential_damping, params.friction);
    let spring = k * depth.max(0.0);
    match mode {
        Mode::Off => None,
        Mode::Stick => Some((Matrix3::from_diagonal(&Vector3::new(kt, kt, c)), Vector3::new(0.0, 0.0, spring))),
        Mode::Slide([sx, sy]) => {
            #[rustfmt::skip]
            let damping = Matrix3::new(
                0.0, 0.0, -mu * c * sx,
                0.0, 0.0, -mu * c * sy,
                0.0, 0.0, c,
            );
            Some((damping, Vector3::new(-mu * spring * sx, -mu * spring * sy, spring)))
        }
    }
}

/// `q ⊗ exp(ω dt / 2)` with body-frame `ω`, renormalized.
pub fn integrate_orientation(q: &Quaternion<f64>, omega: &Vector3<f64>, dt: f64) -> Quaternion<f64> {
    let half = omega * (0.5 * dt);
    let angle = half.norm();
    let (w, s) = if angle > 1e-12 {
        (angle.cos(), angle.sin() / angle)
    } else {
        (1.0 - 0.5 * angle * angle, 1.0 - angle * angle / 6.0)
    };
    let dq = Quaternion::new(w, s * half.x, s * half.y, s * half.z);
    (q * dq).normalize()
}
