//! Websocket message schema shared by `serve` and `replay`. Every message is
//! one JSON object in a text frame, tagged by `type` (server to client) or
//! `kind` (client to server).

use quadfault::env::{Command, RewardTerms, Termination};
use quadfault::sim::{Leg, LegStatus, JOINTS};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Command limits applied on receipt.
pub const VX_RANGE: [f64; 2] = [-0.2, 1.0];
pub const WZ_RANGE: [f64; 2] = [-0.5, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RemoteCommand {
    SetCommand { vx: f64, wz: f64 },
    InjectFault { leg: Leg, status: LegStatus },
    ClearFault,
    Reset,
    Pause,
    Resume,
}

impl RemoteCommand {
    /// Clamps velocity commands into the accepted range; non-finite values
    /// become zero.
    pub fn clamped(self) -> Self {
        match self {
            RemoteCommand::SetCommand { vx, wz } => {
                let c = |v: f64, [lo, hi]: [f64; 2]| if v.is_finite() { v.clamp(lo, hi) } else { 0.0 };
                RemoteCommand::SetCommand { vx: c(vx, VX_RANGE), wz: c(wz, WZ_RANGE) }
            }
            other => other,
        }
    }
}

/// One tick of the served (or replayed) robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub tick: u64,
    /// Simulated time, s.
    pub time: f64,
    pub command: Command,
    pub trunk_position: [f64; 3],
    /// `[w, x, y, z]`
    pub trunk_orientation: [f64; 4],
    /// World frame, m/s.
    pub trunk_linear_velocity: [f64; 3],
    /// Body frame, rad/s.
    pub trunk_angular_velocity: [f64; 3],
    pub q: [f64; JOINTS],
    pub qd: [f64; JOINTS],
    /// Mean applied torque over the tick; absent when replaying logs
    /// without torques.
    pub torques: Option<[f64; JOINTS]>,
    pub action: Option<[f64; JOINTS]>,
    /// Discriminator probabilities over health, limit, weak.
    pub probabilities: Option<[f64; 3]>,
    pub committed_status: LegStatus,
    pub active_head: LegStatus,
    /// Status actually in force on the robot.
    pub true_status: LegStatus,
    pub fault_leg: Option<Leg>,
    pub termination: Termination,
    pub paused: bool,
    pub reward: Option<RewardTerms>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { protocol_version: u32, tick_rate: f64, server: String },
    Telemetry(Box<TelemetryFrame>),
    Error { message: String },
}
