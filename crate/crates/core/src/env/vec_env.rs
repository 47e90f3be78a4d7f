use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    reflect_init, reset_env, step_env, CurriculumState, EnvConfig, EnvError, EnvStep, EpisodeState, Observation,
    RewardTerms, Stage, Termination,
};
use crate::sim::{LegStatus, JOINTS};

/// Environment counts per status group. Environments are laid out as
/// `[health.., weak.., limit..]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Partition {
    pub health: usize,
    pub weak: usize,
    pub limit: usize,
}

impl Default for Partition {
    fn default() -> Self {
        Self { health: 512, weak: 256, limit: 256 }
    }
}

impl Partition {
    /// `2n : n : n`.
    pub fn two_one_one(n: usize) -> Self {
        Self { health: 2 * n, weak: n, limit: n }
    }

    pub fn health_only(n: usize) -> Self {
        Self { health: n, weak: 0, limit: 0 }
    }

    pub fn total(&self) -> usize {
        self.health + self.weak + self.limit
    }

    pub fn group_of(&self, env: usize) -> LegStatus {
        if env < self.health {
            LegStatus::Health
        } else if env < self.health + self.weak {
            LegStatus::Weak
        } else {
            LegStatus::Limit
        }
    }

    /// Healthy partner of a fault environment: fault environments are
    /// numbered consecutively from zero and paired with health env `k mod H`.
    pub fn paired_health(&self, env: usize) -> Option<usize> {
        if env < self.health || env >= self.total() || self.health == 0 {
            None
        } else {
            Some((env - self.health) % self.health)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VecEnvConfig {
    pub env: EnvConfig,
    pub partition: Partition,
    pub stage: Stage,
    /// Copy the paired healthy state into fault environments at episode start.
    pub reflection: bool,
    pub seed: u64,
    /// Spread the first episodes' step counters uniformly over the episode
    /// so resets and reflections are desynchronized.
    pub randomize_initial_phase: bool,
    /// Step environments on the rayon pool.
    pub parallel: bool,
}

impl Default for VecEnvConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            partition: Partition::default(),
            stage: Stage::One,
            reflection: true,
            seed: 0,
            randomize_initial_phase: true,
            parallel: true,
        }
    }
}

/// Per-environment side information from [`VecEnv::step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub env: usize,
    /// Ticks completed in the episode when this step ended it or, otherwise,
    /// the running count.
    pub step: usize,
    /// True leg status during the tick just simulated.
    pub label: LegStatus,
    /// Status in force for the next action.
    pub next_status: LegStatus,
    pub termination: Termination,
    /// Observation at the end of a finished episode, before the reset.
    pub terminal_obs: Option<Observation>,
    pub episode_return: Option<f64>,
    /// Joint angles and rates after the tick, before any reset.
    pub joint_positions: [f64; JOINTS],
    pub joint_velocities: [f64; JOINTS],
    pub terms: RewardTerms,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Batch of independently seeded environments stepped in lockstep.
pub struct VecEnv {
    cfg: VecEnvConfig,
    envs: Vec<EpisodeState>,
    rngs: Vec<ChaCha8Rng>,
    obs: Vec<Observation>,
    curriculum: CurriculumState,
}

impl VecEnv {
    pub fn new(cfg: VecEnvConfig) -> Result<Self, EnvError> {
        cfg.env.validate(cfg.stage)?;
        let n = cfg.partition.total();
        if n == 0 {
            return Err(EnvError::Config("partition has no environments".into()));
        }
        if cfg.reflection && cfg.stage == Stage::One && cfg.partition.health == 0 && n > 0 {
            return Err(EnvError::Pairing("reflection needs at least one health environment".into()));
        }
        let mut rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(i as u64);
                r
            })
            .collect();
        let mut envs = Vec::with_capacity(n);
        for (i, rng) in rngs.iter_mut().enumerate() {
            envs.push(reset_env(&cfg.env, rng, cfg.partition.group_of(i), cfg.stage)?);
        }
        let mut venv = Self { cfg, envs, rngs, obs: Vec::new(), curriculum: CurriculumState::new(0, 1) };
        if venv.reflects() {
            for i in venv.cfg.partition.health..n {
                venv.reflect(i)?;
            }
        }
        if venv.cfg.randomize_initial_phase {
            let steps = venv.cfg.env.episode_steps;
            for (ep, rng) in venv.envs.iter_mut().zip(&mut venv.rngs) {
                ep.step = rng.random_range(0..steps);
                if let Some(s) = ep.schedule.clone() {
                    ep.set_schedule(&venv.cfg.env, s);
                }
            }
        }
        venv.obs = venv.envs.iter().map(|e| e.observation(&venv.cfg.env)).collect::<Result<_, _>>()?;
        Ok(venv)
    }

    fn reflects(&self) -> bool {
        self.cfg.reflection && self.cfg.stage == Stage::One
    }

    fn reflect(&mut self, env: usize) -> Result<(), EnvError> {
        let partner = self
            .cfg
            .partition
            .paired_health(env)
            .ok_or_else(|| EnvError::Pairing(format!("environment {env} has no healthy partner")))?;
        let (head, tail) = self.envs.split_at_mut(env);
        reflect_init(&head[partner], &mut tail[0])
    }

    pub fn config(&self) -> &VecEnvConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn envs(&self) -> &[EpisodeState] {
        &self.envs
    }

    /// Status each environment is in for its next action.
    pub fn statuses(&self) -> Vec<LegStatus> {
        self.envs.iter().map(|e| e.status()).collect()
    }

    pub fn curriculum(&self) -> CurriculumState {
        self.curriculum
    }

    pub fn set_curriculum(&mut self, cur: CurriculumState) {
        self.curriculum = cur;
    }

    /// One control tick for every environment, followed by automatic resets.
    /// Healthy environments reset first so reflection copies see their new
    /// episodes.
    pub fn step(&mut self, actions: &[[f64; JOINTS]]) -> Result<Vec<StepResult>, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::BatchSize { expected: self.envs.len(), got: actions.len() });
        }
        let env_cfg = &self.cfg.env;
        let cur = self.curriculum;
        let stepped: Vec<Result<EnvStep, EnvError>> = if self.cfg.parallel {
            self.envs.par_iter_mut().zip(actions.par_iter()).map(|(ep, a)| step_env(env_cfg, ep, a, &cur)).collect()
        } else {
            self.envs.iter_mut().zip(actions).map(|(ep, a)| step_env(env_cfg, ep, a, &cur)).collect()
        };
        let mut results = Vec::with_capacity(self.envs.len());
        for (i, s) in stepped.into_iter().enumerate() {
            let s = s?;
            let ep = &self.envs[i];
            let done = s.termination.is_done();
            results.push(StepResult {
                obs: s.obs,
                reward: s.reward,
                done,
                info: StepInfo {
                    env: i,
                    step: ep.step,
                    label: s.label,
                    next_status: ep.status(),
                    termination: s.termination,
                    terminal_obs: done.then_some(s.obs),
                    episode_return: done.then_some(ep.episode_return),
                    joint_positions: ep.robot.q,
                    joint_velocities: ep.robot.qd,
                    terms: s.terms,
                },
            });
        }

        let health = self.cfg.partition.health;
        let done: Vec<usize> = (0..results.len()).filter(|&i| results[i].done).collect();
        let reflects = self.reflects();
        for &i in done.iter().filter(|&&i| i < health || !reflects) {
            self.reset_one(i)?;
        }
        for &i in done.iter().filter(|&&i| i >= health && reflects) {
            self.reset_one(i)?;
            self.reflect(i)?;
        }
        for &i in &done {
            let obs = self.envs[i].observation(&self.cfg.env)?;
            results[i].obs = obs;
            results[i].info.next_status = self.envs[i].status();
        }
        for (o, r) in self.obs.iter_mut().zip(&results) {
            *o = r.obs;
        }
        Ok(results)
    }

    fn reset_one(&mut self, i: usize) -> Result<(), EnvError> {
        let group = self.cfg.partition.group_of(i);
        self.envs[i] = reset_env(&self.cfg.env, &mut self.rngs[i], group, self.cfg.stage)?;
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_info_jsonl<W: Write>(mut w: W, infos: &[StepInfo]) -> std::io::Result<()> {
    for info in infos {
        serde_json::to_writer(&mut w, info)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
