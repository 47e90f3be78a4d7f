use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_episodes, CommandDist, Controller, EnvConfig, EpisodeSpec, EvalError, Protocol};
use crate::policy::SelectionMode;
use crate::sim::{LegStatus, JOINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionConfig {
    pub agents: usize,
    pub ticks: usize,
    pub seed: u64,
    pub command: CommandDist,
    pub switching: SelectionMode,
    /// Candidate episodes tried per status before giving up on finding
    /// `agents` that stay up for `ticks`.
    pub max_attempts: usize,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        Self {
            agents: 6,
            ticks: 120,
            seed: 0,
            command: CommandDist::MIDDLE,
            switching: SelectionMode::Oracle,
            max_attempts: 60,
        }
    }
}

/// One tick of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub status: LegStatus,
    pub agent: usize,
    pub tick: usize,
    pub action: [f64; JOINTS],
    pub q: [f64; JOINTS],
    pub qd: [f64; JOINTS],
    pub trunk_position: [f64; 3],
    /// `[w, x, y, z]`
    pub trunk_orientation: [f64; 4],
    pub trunk_linear_velocity: [f64; 3],
    pub trunk_angular_velocity: [f64; 3],
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = vec!["status".into(), "agent".into(), "tick".into()];
    for (prefix, n) in [("action", JOINTS), ("q", JOINTS), ("qd", JOINTS)] {
        h.extend((0..n).map(|j| format!("{prefix}{j}")));
    }
    h.extend(["px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"].map(String::from));
    h
}

/// Column names of the CSV export, in order.
pub static TRAJECTORY_HEADER: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(header);

impl TrajectoryRow {
    fn record(&self) -> Vec<String> {
        let mut r = vec![self.status.name().to_string(), self.agent.to_string(), self.tick.to_string()];
        let nums = self
            .action
            .iter()
            .chain(&self.q)
            .chain(&self.qd)
            .chain(&self.trunk_position)
            .chain(&self.trunk_orientation)
            .chain(&self.trunk_linear_velocity)
            .chain(&self.trunk_angular_velocity);
        r.extend(nums.map(|v| format!("{v}")));
        r
    }
}

/// Records `agents` trajectories of `ticks` ticks for each status (faults
/// active from the first tick) and writes them to `<stem>.csv` and
/// `<stem>.jsonl` in `out_dir`. Episodes that end before `ticks` are
/// replaced by the next candidate.
pub fn export_trajectories(
    env: &EnvConfig,
    controller: &Controller,
    cfg: &DistributionConfig,
    out_dir: Option<&Path>,
    stem: &str,
) -> Result<Vec<TrajectoryRow>, EvalError> {
    if cfg.agents == 0 || cfg.ticks == 0 || cfg.ticks > env.episode_steps {
        return Err(EvalError::Config(format!(
            "need at least one agent and 1..={} ticks per trajectory",
            env.episode_steps
        )));
    }
    cfg.command.validate(env)?;
    let controller = Controller { switching: cfg.switching, ..*controller };
    let short = EnvConfig { episode_steps: cfg.ticks, ..env.clone() };
    let mut rows = Vec::with_capacity(3 * cfg.agents * cfg.ticks);
    for status in LegStatus::ALL {
        let protocol = match status {
            LegStatus::Health => Protocol::HealthOnly,
            s => Protocol::FromStart(s),
        };
        let specs: Vec<EpisodeSpec> = (0..cfg.max_attempts.max(cfg.agents))
            .map(|k| EpisodeSpec {
                seed: cfg.seed,
                stream: ((status.index() as u64) << 32) | k as u64,
                protocol,
                command: cfg.command,
            })
            .collect();
        let mut per_episode: Vec<Vec<TrajectoryRow>> = vec![Vec::new(); specs.len()];
        let outcomes = run_episodes(&short, &controller, &specs, specs.len(), |v| {
            let s = &v.state.robot;
            let o = &s.trunk_orientation;
            per_episode[v.episode].push(TrajectoryRow {
                status,
                agent: 0,
                tick: v.tick,
                action: *v.action,
                q: s.q,
                qd: s.qd,
                trunk_position: s.trunk_position.into(),
                trunk_orientation: [o.w, o.i, o.j, o.k],
                trunk_linear_velocity: s.trunk_linear_velocity.into(),
                trunk_angular_velocity: s.trunk_angular_velocity.into(),
            });
        })?;
        let complete: Vec<usize> = (0..specs.len())
            .filter(|&k| outcomes[k].survived() && per_episode[k].len() == cfg.ticks)
            .take(cfg.agents)
            .collect();
        if complete.len() < cfg.agents {
            return Err(EvalError::Config(format!(
                "only {} of {} candidate {} episodes lasted {} ticks",
                complete.len(),
                specs.len(),
                status.name(),
                cfg.ticks
            )));
        }
        for (agent, &k) in complete.iter().enumerate() {
            rows.extend(per_episode[k].drain(..).map(|mut r| {
                r.agent = agent;
                r
            }));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(header())?;
        for r in &rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
        let mut j = BufWriter::new(File::create(dir.join(format!("{stem}.jsonl")))?);
        for r in &rows {
            serde_json::to_writer(&mut j, r)?;
            j.write_all(b"\n")?;
        }
        j.flush()?;
    }
    Ok(rows)
}
