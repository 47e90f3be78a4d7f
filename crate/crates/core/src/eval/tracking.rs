use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_episodes, CommandDist, Controller, EnvConfig, EpisodeSpec, EvalError, Protocol};
use crate::env::CONTROL_HZ;
use crate::policy::{HeadSelector, SelectionMode};
use crate::sim::LegStatus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Fixed `(vx, wz)` commands.
    pub commands: Vec<[f64; 2]>,
    pub statuses: Vec<LegStatus>,
    pub envs: usize,
    pub seed: u64,
    /// Time before the first window starts, s.
    pub warmup: f64,
    /// Window length, s.
    pub window: f64,
    pub switching: SelectionMode,
    pub hysteresis: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            commands: vec![[0.45, 0.0], [0.8, 0.0]],
            statuses: LegStatus::ALL.to_vec(),
            envs: 20,
            seed: 0,
            warmup: 1.0,
            window: 2.0,
            switching: SelectionMode::Discriminator,
            hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
        }
    }
}

/// Tracking statistics for one (status, command) cell, averaged over the
/// complete windows of all its episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub status: LegStatus,
    pub command_vx: f64,
    pub command_wz: f64,
    pub episodes: usize,
    pub survived: usize,
    pub windows: usize,
    /// Mean forward speed, m/s.
    pub mean_vx: f64,
    /// Mean planar speed, m/s.
    pub mean_speed: f64,
    /// Mean of `|window mean vx − command| / command`; absolute error for a
    /// zero command.
    pub vx_error: f64,
    /// Mean yaw rate, rad/s.
    pub mean_yaw_rate: f64,
}

/// One 50 Hz sample of the first episode in a cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSample {
    pub status: LegStatus,
    pub command_vx: f64,
    pub command_wz: f64,
    pub tick: usize,
    pub time: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub rows: Vec<TrackingRow>,
    pub series: Vec<TrackingSample>,
}

impl TrackingReport {
    pub fn row(&self, status: LegStatus, vx: f64) -> Option<&TrackingRow> {
        self.rows.iter().find(|r| r.status == status && (r.command_vx - vx).abs() < 1e-9)
    }

    pub fn write_csv(&self, rows: &Path, series: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(rows)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(series)?;
        for s in &self.series {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = Vec::new();
        writeln!(s, "tracking").ok();
        for r in &self.rows {
            writeln!(
                s,
                "  {:<7} cmd ({:.2}, {:.2})  vx {:.3} m/s  err {:>5.1}%  yaw {:+.3} rad/s  survived {}/{}  windows {}",
                r.status.name(),
                r.command_vx,
                r.command_wz,
                r.mean_vx,
                100.0 * r.vx_error,
                r.mean_yaw_rate,
                r.survived,
                r.episodes,
                r.windows
            )
            .ok();
        }
        String::from_utf8(s).expect("ascii")
    }
}

/// Runs every status from the first tick at each fixed command and measures
/// trunk velocities over consecutive windows after the warm-up.
pub fn run_tracking(
    env: &EnvConfig,
    controller: &Controller,
    cfg: &TrackingConfig,
) -> Result<TrackingReport, EvalError> {
    if cfg.envs == 0 || !(cfg.window > 0.0) || !(cfg.warmup >= 0.0) {
        return Err(EvalError::Config("tracking needs envs ≥ 1, a positive window and a non-negative warm-up".into()));
    }
    let controller = Controller { switching: cfg.switching, hysteresis: cfg.hysteresis, ..*controller };
    let warm = (cfg.warmup * CONTROL_HZ).round() as usize;
    let win = ((cfg.window * CONTROL_HZ).round() as usize).max(1);
    let mut report = TrackingReport::default();
    for (ci, &[vx, wz]) in cfg.commands.iter().enumerate() {
        let command = CommandDist::fixed(vx, wz);
        command.validate(env)?;
        for &status in &cfg.statuses {
            let protocol = match status {
                LegStatus::Health => Protocol::HealthOnly,
                s => Protocol::FromStart(s),
            };
            let specs: Vec<EpisodeSpec> = (0..cfg.envs)
                .map(|k| EpisodeSpec {
                    seed: cfg.seed,
                    stream: ((ci as u64) << 40) | ((status.index() as u64) << 32) | k as u64,
                    protocol,
                    command,
                })
                .collect();
            // Per-episode tick series of (vx, vy, wz).
            let mut traces: Vec<Vec<[f64; 3]>> = vec![Vec::new(); cfg.envs];
            let outcomes = run_episodes(env, &controller, &specs, cfg.envs, |v| {
                let Some(r) = &v.step.report else { return };
                let b = r.mean_body_velocity;
                traces[v.episode].push([b.x, b.y, r.mean_yaw_rate]);
                if v.episode == 0 {
                    let w = v.state.robot.trunk_angular_velocity;
                    report.series.push(TrackingSample {
                        status,
                        command_vx: vx,
                        command_wz: wz,
                        tick: v.tick,
                        time: (v.tick + 1) as f64 / CONTROL_HZ,
                        vx: b.x,
                        vy: b.y,
                        vz: b.z,
                        wx: w.x,
                        wy: w.y,
                        wz: r.mean_yaw_rate,
                    });
                }
            })?;
            let mut errs = Vec::new();
            let mut vxs = Vec::new();
            let mut speeds = Vec::new();
            let mut yaws = Vec::new();
            for trace in &traces {
                let mut start = warm;
                while start + win <= trace.len() {
                    let w = &trace[start..start + win];
                    let n = w.len() as f64;
                    let mvx = w.iter().map(|s| s[0]).sum::<f64>() / n;
                    let mvy = w.iter().map(|s| s[1]).sum::<f64>() / n;
                    let myaw = w.iter().map(|s| s[2]).sum::<f64>() / n;
                    errs.push(if vx.abs() > 1e-9 { (mvx - vx).abs() / vx.abs() } else { mvx.abs() });
                    vxs.push(mvx);
                    speeds.push(mvx.hypot(mvy));
                    yaws.push(myaw);
                    start += win;
                }
            }
            let avg = |xs: &[f64]| if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
            report.rows.push(TrackingRow {
                status,
                command_vx: vx,
                command_wz: wz,
                episodes: outcomes.len(),
                survived: outcomes.iter().filter(|o| o.survived()).count(),
                windows: errs.len(),
                mean_vx: avg(&vxs),
                mean_speed: avg(&speeds),
                vx_error: avg(&errs),
                mean_yaw_rate: avg(&yaws),
            });
        }
    }
    Ok(report)
}
