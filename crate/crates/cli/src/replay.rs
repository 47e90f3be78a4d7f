use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use quadfault::env::{Command, Termination, CONTROL_HZ};
use quadfault::eval::TrajectoryRow;

use crate::error::CliError;
use crate::protocol::{ServerMessage, TelemetryFrame};

fn from_trajectory(row: TrajectoryRow) -> TelemetryFrame {
    TelemetryFrame {
        tick: row.tick as u64,
        time: (row.tick + 1) as f64 / CONTROL_HZ,
        command: Command::default(),
        trunk_position: row.trunk_position,
        trunk_orientation: row.trunk_orientation,
        trunk_linear_velocity: row.trunk_linear_velocity,
        trunk_angular_velocity: row.trunk_angular_velocity,
        q: row.q,
        qd: row.qd,
        torques: None,
        action: Some(row.action),
        probabilities: None,
        committed_status: row.status,
        active_head: row.status,
        true_status: row.status,
        fault_leg: None,
        termination: Termination::Running,
        paused: false,
        reward: None,
    }
}

/// Parses one log line: a recorded telemetry message, a bare frame, or a
/// trajectory export row.
fn parse_line(line: &str) -> Result<TelemetryFrame, String> {
    if let Ok(ServerMessage::Telemetry(f)) = serde_json::from_str::<ServerMessage>(line) {
        return Ok(*f);
    }
    if let Ok(f) = serde_json::from_str::<TelemetryFrame>(line) {
        return Ok(f);
    }
    serde_json::from_str::<TrajectoryRow>(line).map(from_trajectory).map_err(|e| e.to_string())
}

/// Re-emits the frames of a log file as telemetry messages, one JSON object
/// per line, paced at `50 Hz × speed` (unpaced when `speed` is 0). Returns
/// the frame count.
pub fn cmd_replay(path: &Path, speed: f64, mut out: impl Write) -> Result<usize, CliError> {
    if !(speed >= 0.0) || !speed.is_finite() {
        return Err(CliError::Usage("--speed must be a non-negative number".into()));
    }
    let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let period = (speed > 0.0).then(|| Duration::from_secs_f64(1.0 / (CONTROL_HZ * speed)));
    let start = Instant::now();
    let mut frames = 0usize;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame =
            parse_line(&line).map_err(|e| CliError::Parse(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        if let Some(p) = period {
            let due = start + p * frames as u32;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        let msg = ServerMessage::Telemetry(Box::new(frame));
        serde_json::to_writer(&mut out, &msg).map_err(|e| CliError::Io(e.to_string()))?;
        out.write_all(b"\n")?;
        frames += 1;
    }
    out.flush()?;
    Ok(frames)
}
