//! Reduced-order rigid-body simulator of an 8-DOF SOLO8-like quadruped.
//!
//! Rigid trunk, massless planar legs with reflected rotor inertia at each
//! joint, spherical feet against a flat penalty-contact ground, and a PD
//! joint law refreshed at 200 Hz inside a 50 Hz control tick. Joint faults
//! (power loss, mechanical lock) are injected through [`FaultState`].

mod contact;
mod integrate;
mod kinematics;
mod model;
mod pd;
mod state;
mod tick;

pub use contact::contact_forces;
pub use integrate::{integrate_orientation, integrate_substep};
pub use kinematics::{forward_kinematics, leg_chain, FootKinematics};
pub use model::{Leg, RobotModel};
pub use pd::pd_torque;
pub use state::{
    ContactParams, ContactState, FaultState, FootContact, LegStatus, LockMode, PdGains, RobotState, TickReport,
};
pub use tick::Simulator;

pub const LEGS: usize = 4;
pub const JOINTS: usize = 8;
/// Physics substep, s.
pub const SUBSTEP_DT: f64 = 0.001;
pub const SUBSTEPS_PER_PD: usize = 5;
pub const PD_UPDATES_PER_TICK: usize = 4;
/// Policy period, s.
pub const CONTROL_DT: f64 = SUBSTEP_DT * (SUBSTEPS_PER_PD * PD_UPDATES_PER_TICK) as f64;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid fault state: {0}")]
    InvalidFault(String),
    #[error("simulation diverged")]
    Diverged,
}
