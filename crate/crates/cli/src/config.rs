//! Run configuration read from TOML. Every section is optional and falls
//! back to the library defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use quadfault::discriminator::DiscTrainConfig;
use quadfault::env::EnvConfig;
use quadfault::eval::{ContactConfig, DistributionConfig, ExperimentConfig, SwitchingDatasetConfig, TrackingConfig};
use quadfault::policy::PolicyArch;
use quadfault::ppo::{PpoConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub envs: usize,
    pub stage2_iterations: usize,
    pub checkpoint_every: usize,
    pub max_failed_iterations: usize,
    pub dataset_episodes: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            envs: t.envs,
            stage2_iterations: t.stage2_iterations,
            checkpoint_every: t.checkpoint_every,
            max_failed_iterations: t.max_failed_iterations,
            dataset_episodes: t.dataset_episodes,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub survival: ExperimentConfig,
    pub tracking: TrackingConfig,
    pub contact: ContactConfig,
    pub distribution: DistributionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// 1 steps environments sequentially and keeps every output
    /// reproducible; more spreads them over a thread pool.
    pub workers: usize,
    pub model: PolicyArch,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub training: TrainingSection,
    pub discriminator: DiscTrainConfig,
    /// Closed-loop episodes added to the discriminator data by `train-disc --policy`.
    pub disc_collection: SwitchingDatasetConfig,
    pub eval: EvalSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("runs/default"),
            workers: 1,
            model: PolicyArch::default(),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            training: TrainingSection::default(),
            discriminator: DiscTrainConfig::default(),
            disc_collection: SwitchingDatasetConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: AppConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        if cfg.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            env: self.env.clone(),
            ppo: self.ppo.clone(),
            arch: self.model.clone(),
            envs: self.training.envs,
            seed: self.seed,
            stage2_iterations: self.training.stage2_iterations,
            checkpoint_every: self.training.checkpoint_every,
            parallel: self.workers > 1,
            max_failed_iterations: self.training.max_failed_iterations,
            dataset_episodes: self.training.dataset_episodes,
        }
    }
}
