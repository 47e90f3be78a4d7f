//! Experiment harness: survival studies across policies and fault
//! protocols, velocity tracking, locked-leg contact time and trajectory
//! export.

mod contact;
mod dataset;
mod runner;
mod survival;
mod tracking;
mod trajectories;

pub use contact::{run_contact_time, ContactConfig, ContactReport, ContactRow, SpeedRegime};
pub use dataset::{collect_switching_dataset, SwitchingDatasetConfig};
pub use runner::{run_episodes, run_episodes_with_delay, Controller, EpisodeOutcome, EpisodeSpec, TickView};
pub use survival::{run_survival, SurvivalReport, SurvivalRow};
pub use tracking::{run_tracking, TrackingConfig, TrackingReport, TrackingRow, TrackingSample};
pub use trajectories::{export_trajectories, DistributionConfig, TrajectoryRow, TRAJECTORY_HEADER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discriminator::DiscError;
use crate::env::{EnvConfig, EnvError};
use crate::nets::NetError;
use crate::policy::{HeadSelector, PolicyError, SelectionMode};
use crate::sim::LegStatus;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Discriminator(#[from] DiscError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<serde_json::Error> for EvalError {
    fn from(e: serde_json::Error) -> Self {
        EvalError::Io(e.into())
    }
}

/// How the leg status evolves during an evaluation episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "status")]
pub enum Protocol {
    /// Healthy for the whole episode.
    HealthOnly,
    /// One change to the given status at a random onset.
    Fault(LegStatus),
    /// A stage-two style schedule with one or more changes.
    Mixed,
    /// The given status from the first tick.
    FromStart(LegStatus),
}

impl Protocol {
    /// The four survival protocols: health, limit, weak, mixed.
    pub const SURVIVAL: [Protocol; 4] =
        [Protocol::HealthOnly, Protocol::Fault(LegStatus::Limit), Protocol::Fault(LegStatus::Weak), Protocol::Mixed];

    pub fn name(self) -> String {
        match self {
            Protocol::HealthOnly => "health".into(),
            Protocol::Fault(s) => s.name().into(),
            Protocol::Mixed => "mixed".into(),
            Protocol::FromStart(s) => format!("{}_from_start", s.name()),
        }
    }
}

/// Forward speed command drawn uniformly from `mean ± half_width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandDist {
    pub vx_mean: f64,
    pub vx_half_width: f64,
    #[serde(default)]
    pub wz: f64,
}

impl CommandDist {
    pub const MIDDLE: CommandDist = CommandDist { vx_mean: 0.4, vx_half_width: 0.1, wz: 0.0 };
    pub const HIGH: CommandDist = CommandDist { vx_mean: 0.8, vx_half_width: 0.1, wz: 0.0 };

    pub fn fixed(vx: f64, wz: f64) -> Self {
        Self { vx_mean: vx, vx_half_width: 0.0, wz }
    }

    pub fn bounds(&self) -> [f64; 2] {
        [self.vx_mean - self.vx_half_width, self.vx_mean + self.vx_half_width]
    }

    /// Commands must stay inside the range seen during training.
    pub fn validate(&self, env: &EnvConfig) -> Result<(), EvalError> {
        let [lo, hi] = self.bounds();
        let [tlo, thi] = env.randomization.command_vx;
        let [wlo, whi] = env.randomization.command_wz;
        if !(self.vx_half_width >= 0.0) || lo < tlo - 1e-12 || hi > thi + 1e-12 {
            return Err(EvalError::Config(format!("vx command [{lo}, {hi}] leaves the trained range [{tlo}, {thi}]")));
        }
        if self.wz < wlo || self.wz > whi {
            return Err(EvalError::Config(format!("wz command {} leaves the trained range [{wlo}, {whi}]", self.wz)));
        }
        Ok(())
    }
}

/// Survival experiment layout: every protocol is run once per seed with
/// `envs_per_group` environments, so the default is 4 × 4 groups of 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub envs_per_group: usize,
    pub seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
    pub command: CommandDist,
    pub switching: SelectionMode,
    pub hysteresis: usize,
    /// Environments stepped together.
    pub batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            envs_per_group: 100,
            seeds: vec![0, 1, 2, 3],
            protocols: Protocol::SURVIVAL.to_vec(),
            command: CommandDist::MIDDLE,
            switching: SelectionMode::Discriminator,
            hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
            batch: 256,
        }
    }
}

impl ExperimentConfig {
    pub fn groups(&self) -> usize {
        self.seeds.len() * self.protocols.len()
    }

    pub fn validate(&self, env: &EnvConfig) -> Result<(), EvalError> {
        if self.envs_per_group == 0 {
            return Err(EvalError::Config("envs_per_group must be at least 1".into()));
        }
        if self.seeds.is_empty() || self.protocols.is_empty() {
            return Err(EvalError::Config("at least one seed and one protocol are required".into()));
        }
        if self.batch == 0 {
            return Err(EvalError::Config("batch must be at least 1".into()));
        }
        self.command.validate(env)
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub(crate) fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
