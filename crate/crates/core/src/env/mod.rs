//! Episode logic on top of [`crate::sim`]: observations, rewards,
//! termination, randomization, fault schedules and the vectorized stepper.

mod episode;
mod observation;
mod randomization;
mod reward;
mod schedule;
mod termination;
mod vec_env;

pub use episode::{reflect_init, reset_env, step_env, EnvStep, EpisodeState};
pub use observation::{build_observation, Observation, OBS_DIM};
pub use randomization::{DomainRandomization, DrSample};
pub use reward::{compute_reward, CurriculumState, RewardConfig, RewardContext, RewardTerms};
pub use schedule::{onset_step, sample_fault_schedule, FaultEvent, FaultSchedule, ScheduleConfig};
pub use termination::{check_termination, trunk_touches_ground, Termination, TerminationConfig};
pub use vec_env::{write_info_jsonl, Partition, StepInfo, StepResult, VecEnv, VecEnvConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{ContactParams, Leg, LockMode, PdGains, RobotModel, SimError, JOINTS};

/// Policy rate, Hz.
pub const CONTROL_HZ: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("action batch has {got} entries for {expected} environments")]
    BatchSize { expected: usize, got: usize },
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Velocity command: forward speed (m/s) and yaw rate (rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub vx: f64,
    pub wz: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Fault envs carry their status from the first tick.
    #[default]
    One,
    /// Every env follows a random fault schedule, starting healthy.
    Two,
}

/// Everything needed to reset and step a single environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub model: RobotModel,
    pub gains: PdGains,
    pub contact: ContactParams,
    pub episode_steps: usize,
    /// Joint target offset per unit of policy output, rad.
    pub action_scale: f64,
    /// Raw policy outputs are clipped to `±action_clip` before scaling.
    pub action_clip: f64,
    pub joint_velocity_scale: f64,
    pub fault_leg: Leg,
    pub lock_mode: LockMode,
    pub termination: TerminationConfig,
    pub reward: RewardConfig,
    pub randomization: DomainRandomization,
    pub schedule: ScheduleConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            model: RobotModel::default(),
            gains: PdGains::default(),
            contact: ContactParams::default(),
            episode_steps: 400,
            action_scale: 0.5,
            action_clip: 3.0,
            joint_velocity_scale: 0.05,
            fault_leg: Leg::LeftFront,
            lock_mode: LockMode::Hard,
            termination: TerminationConfig::default(),
            reward: RewardConfig::default(),
            randomization: DomainRandomization::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl EnvConfig {
    /// Checks the configuration; schedule settings only matter in stage two.
    pub fn validate(&self, stage: Stage) -> Result<(), EnvError> {
        self.model.validate()?;
        self.gains.validate()?;
        if self.episode_steps == 0 {
            return Err(EnvError::Config("episode_steps must be positive".into()));
        }
        if !(self.action_scale > 0.0 && self.action_clip > 0.0 && self.joint_velocity_scale > 0.0) {
            return Err(EnvError::Config("action and observation scales must be positive".into()));
        }
        self.reward.validate()?;
        self.randomization.validate()?;
        if stage == Stage::Two {
            self.schedule.validate(self.episode_length())?;
        }
        Ok(())
    }

    /// Episode length in seconds.
    pub fn episode_length(&self) -> f64 {
        self.episode_steps as f64 / CONTROL_HZ
    }

    /// Joint targets relative to the default pose for a raw policy output.
    pub fn scaled_action(&self, raw: &[f64; JOINTS]) -> ([f64; JOINTS], [f64; JOINTS]) {
        let clipped = raw.map(|a| a.clamp(-self.action_clip, self.action_clip));
        (clipped, clipped.map(|a| a * self.action_scale))
    }
}
