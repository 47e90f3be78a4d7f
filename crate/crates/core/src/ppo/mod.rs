//! Multi-task PPO: rollout collection over partitioned environments, GAE,
//! clipped-surrogate updates where each task's samples reach only the shared
//! front and that task's heads, and the two training stages.

mod buffer;
mod gae;
mod train;
mod update;

pub use buffer::{collect_rollouts, RolloutBuffer, RolloutStats, Segment};
pub use gae::compute_gae;
pub use train::{
    read_dataset, train_stage1, train_stage2, write_dataset, DatasetEpisode, MetricsRow, StageOutcome, TrainConfig,
    Trainer, METRICS_HEADER,
};
pub use update::{ppo_update, surrogate_term, UpdateStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::nets::NetError;
use crate::policy::{Layout, PolicyError};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("sequence lengths differ: {0}")]
    LengthMismatch(String),
    #[error("environment {env} is in status {env_task} but was routed to task {policy_task}")]
    TaskMismatch { env: usize, env_task: usize, policy_task: usize },
    #[error("rollout buffer is empty")]
    EmptyBuffer,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for PpoError {
    fn from(e: serde_json::Error) -> Self {
        PpoError::Io(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Control ticks collected per environment per iteration.
    pub horizon: usize,
    pub iterations: usize,
    /// Multiplier applied to rewards before advantage estimation.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            horizon: 24,
            iterations: 1000,
            reward_scale: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(PpoError::Config("gamma must lie in (0, 1] and lambda in [0, 1]".into()));
        }
        if !(self.clip > 0.0) {
            return Err(PpoError::Config("clip must be positive".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 {
            return Err(PpoError::Config("epochs, minibatches and horizon must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0 && self.reward_scale > 0.0) {
            return Err(PpoError::Config("learning rate, gradient bound and reward scale must be positive".into()));
        }
        Ok(())
    }
}

/// What is trained, and on which environments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainVariant {
    /// One head per status, 2:1:1 partition, reflection initialization.
    Ours,
    /// One shared head trained on healthy environments only.
    Normal,
    /// One shared head trained on the 2:1:1 partition.
    Mix,
    /// `Ours` without reflection initialization.
    NoReflection,
}

impl TrainVariant {
    pub const ALL: [TrainVariant; 4] =
        [TrainVariant::Ours, TrainVariant::Normal, TrainVariant::Mix, TrainVariant::NoReflection];

    pub fn layout(self) -> Layout {
        match self {
            TrainVariant::Ours | TrainVariant::NoReflection => Layout::Hierarchical,
            TrainVariant::Normal | TrainVariant::Mix => Layout::Single,
        }
    }

    pub fn reflection(self) -> bool {
        matches!(self, TrainVariant::Ours | TrainVariant::Mix)
    }

    pub fn health_only(self) -> bool {
        self == TrainVariant::Normal
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainVariant::Ours => "ours",
            TrainVariant::Normal => "normal",
            TrainVariant::Mix => "mix",
            TrainVariant::NoReflection => "no_reflection",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s || (s == "noreflection" && *v == TrainVariant::NoReflection))
    }
}
