//! Discriminator data gathered in closed loop: the oracle switches heads
//! only after a random delay, so the traces contain each status both under
//! the head that was running before the change and under its own head.

use serde::{Deserialize, Serialize};

use super::runner::run_episodes_with_delay;
use super::{CommandDist, Controller, EnvConfig, EpisodeSpec, EvalError, Protocol};
use crate::policy::{HeadSelector, HierarchicalParams, SelectionMode};
use crate::ppo::DatasetEpisode;
use crate::sim::LegStatus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchingDatasetConfig {
    pub episodes: usize,
    /// Longest head-switch delay after a status change, ticks.
    pub max_delay: usize,
    /// Cycled over the episodes.
    pub protocols: Vec<Protocol>,
    /// Defaults to the full trained forward-speed range.
    pub command: Option<CommandDist>,
    pub seed: u64,
    pub batch: usize,
}

impl Default for SwitchingDatasetConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            max_delay: 25,
            protocols: vec![
                Protocol::Mixed,
                Protocol::Mixed,
                Protocol::FromStart(LegStatus::Limit),
                Protocol::FromStart(LegStatus::Weak),
            ],
            command: None,
            seed: 0,
            batch: 256,
        }
    }
}

/// Runs `cfg.episodes` episodes of `policy` with delayed oracle switching and
/// returns their joint-state traces and true labels. Episode ids start at
/// `first_id`.
pub fn collect_switching_dataset(
    env: &EnvConfig,
    policy: &HierarchicalParams<f32>,
    cfg: &SwitchingDatasetConfig,
    first_id: usize,
) -> Result<Vec<DatasetEpisode>, EvalError> {
    if cfg.protocols.is_empty() {
        return Err(EvalError::Config("switching dataset needs at least one protocol".into()));
    }
    let command = cfg.command.unwrap_or_else(|| {
        let [lo, hi] = env.randomization.command_vx;
        CommandDist { vx_mean: 0.5 * (lo + hi), vx_half_width: 0.5 * (hi - lo), wz: 0.0 }
    });
    command.validate(env)?;
    let specs: Vec<EpisodeSpec> = (0..cfg.episodes)
        .map(|k| EpisodeSpec {
            seed: cfg.seed,
            stream: k as u64,
            protocol: cfg.protocols[k % cfg.protocols.len()],
            command,
        })
        .collect();
    let controller = Controller {
        policy,
        discriminator: None,
        switching: SelectionMode::Oracle,
        hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
    };
    let mut episodes: Vec<DatasetEpisode> = (0..cfg.episodes)
        .map(|k| DatasetEpisode {
            episode: first_id + k,
            env: k,
            positions: Vec::new(),
            velocities: Vec::new(),
            labels: Vec::new(),
        })
        .collect();
    run_episodes_with_delay(env, &controller, &specs, cfg.batch.max(1), cfg.max_delay, |v| {
        let ep = &mut episodes[v.episode];
        ep.positions.push(v.state.robot.q);
        ep.velocities.push(v.state.robot.qd);
        ep.labels.push(v.step.label);
    })?;
    Ok(episodes)
}
