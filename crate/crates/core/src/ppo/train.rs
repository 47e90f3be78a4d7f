use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{collect_rollouts, ppo_update, PpoConfig, PpoError, TrainVariant};
use crate::env::{CurriculumState, EnvConfig, Partition, Stage, StepResult, VecEnv, VecEnvConfig};
use crate::nets::{AdamConfig, Checkpoint, OptimizerState, Params};
use crate::policy::{HierarchicalParams, PolicyArch};
use crate::sim::{LegStatus, JOINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub arch: PolicyArch,
    /// Total environment count, split 2:1:1 (or all healthy for `Normal`).
    pub envs: usize,
    pub seed: u64,
    pub stage2_iterations: usize,
    /// Iterations between checkpoint writes; 0 writes only at the end.
    pub checkpoint_every: usize,
    /// Step environments on the rayon pool.
    pub parallel: bool,
    /// Consecutive iterations without a finite update before training aborts.
    pub max_failed_iterations: usize,
    /// Most recent finished stage-two episodes kept for the discriminator.
    pub dataset_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            arch: PolicyArch::default(),
            envs: 1024,
            seed: 0,
            stage2_iterations: 300,
            checkpoint_every: 50,
            parallel: false,
            max_failed_iterations: 5,
            dataset_episodes: 2000,
        }
    }
}

impl TrainConfig {
    pub fn partition(&self, variant: TrainVariant) -> Partition {
        if variant.health_only() {
            Partition::health_only(self.envs)
        } else {
            Partition::two_one_one(self.envs / 4)
        }
    }

    pub fn validate(&self, stage: Stage) -> Result<(), PpoError> {
        self.ppo.validate()?;
        self.env.validate(stage)?;
        if self.envs < 4 || self.envs % 4 != 0 {
            return Err(PpoError::Config("envs must be a positive multiple of 4 for the 2:1:1 split".into()));
        }
        Ok(())
    }
}

pub const METRICS_HEADER: &str = "iteration,stage,penalty_scale,return_health,return_limit,return_weak,\
reward_health,reward_limit,reward_weak,episodes,episode_length,survival,policy_loss,value_loss,entropy,\
approx_kl,clip_fraction,grad_norm,skipped";

/// One line of the training metrics file. Absent values (no finished
/// episode of that kind in the iteration) are written as empty fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub stage: Stage,
    pub penalty_scale: f64,
    /// Mean return of episodes finished this iteration, per task.
    pub returns: [Option<f64>; 3],
    /// Mean per-tick reward, per task.
    pub rewards: [Option<f64>; 3],
    pub episodes: usize,
    pub episode_length: Option<f64>,
    pub survival: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub skipped: usize,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let stage = match self.stage {
            Stage::One => 1,
            Stage::Two => 2,
        };
        [
            self.iteration.to_string(),
            stage.to_string(),
            self.penalty_scale.to_string(),
            opt(self.returns[0]),
            opt(self.returns[1]),
            opt(self.returns[2]),
            opt(self.rewards[0]),
            opt(self.rewards[1]),
            opt(self.rewards[2]),
            self.episodes.to_string(),
            opt(self.episode_length),
            opt(self.survival),
            self.policy_loss.to_string(),
            self.value_loss.to_string(),
            self.entropy.to_string(),
            self.approx_kl.to_string(),
            self.clip_fraction.to_string(),
            self.grad_norm.to_string(),
            self.skipped.to_string(),
        ]
        .join(",")
    }
}

/// Joint-state trace of one finished stage-two episode with its per-tick
/// true status.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEpisode {
    pub episode: usize,
    pub env: usize,
    pub positions: Vec<[f64; JOINTS]>,
    pub velocities: Vec<[f64; JOINTS]>,
    pub labels: Vec<LegStatus>,
}

/// Parameters, optimizer and environments of one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub variant: TrainVariant,
    pub stage: Stage,
    pub params: HierarchicalParams<f32>,
    pub opt: OptimizerState,
    /// Iterations completed across both stages.
    pub iteration: usize,
    /// Length of the penalty ramp; the stage-one iteration budget.
    pub curriculum_total: usize,
    venv: VecEnv,
    rng: ChaCha8Rng,
    failed: usize,
    open_episodes: Vec<DatasetEpisode>,
    finished: VecDeque<DatasetEpisode>,
    episode_counter: usize,
}

impl Trainer {
    /// Fresh stage-one run.
    pub fn new(cfg: TrainConfig, variant: TrainVariant) -> Result<Self, PpoError> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(u64::MAX);
        let params = HierarchicalParams::new(cfg.arch.clone(), variant.layout(), &mut init_rng);
        let total = cfg.ppo.iterations;
        Self::build(cfg, variant, Stage::One, params, None, 0, total)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`], in
    /// `stage`. Moving from stage one to stage two keeps the iteration count
    /// and penalty ramp.
    pub fn resume(cfg: TrainConfig, ckpt: &Checkpoint, stage: Stage) -> Result<Self, PpoError> {
        let meta = &ckpt.metadata;
        let variant: TrainVariant = serde_json::from_value(meta["variant"].clone())
            .map_err(|e| PpoError::Config(format!("checkpoint has no training variant: {e}")))?;
        let iteration = meta["iteration"].as_u64().unwrap_or(0) as usize;
        let total = meta["curriculum_total"].as_u64().unwrap_or(cfg.ppo.iterations as u64) as usize;
        let params = HierarchicalParams::<f32>::from_checkpoint(ckpt)?;
        Self::build(cfg, variant, stage, params, Some(ckpt), iteration, total)
    }

    fn build(
        cfg: TrainConfig,
        variant: TrainVariant,
        stage: Stage,
        params: HierarchicalParams<f32>,
        ckpt: Option<&Checkpoint>,
        iteration: usize,
        curriculum_total: usize,
    ) -> Result<Self, PpoError> {
        cfg.validate(stage)?;
        if stage == Stage::Two && variant.health_only() {
            return Err(PpoError::Config("the normal variant trains on healthy environments only".into()));
        }
        let lengths: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        let adam = AdamConfig {
            learning_rate: cfg.ppo.learning_rate,
            max_grad_norm: Some(cfg.ppo.max_grad_norm),
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(adam, &lengths);
        if let Some(ckpt) = ckpt {
            if ckpt.has_prefix("opt.") {
                opt.import("opt", ckpt)?;
            }
        }
        let stage_seed = match stage {
            Stage::One => cfg.seed,
            Stage::Two => cfg.seed.wrapping_add(0x5eed_0002),
        };
        let venv = VecEnv::new(VecEnvConfig {
            env: cfg.env.clone(),
            partition: cfg.partition(variant),
            stage,
            reflection: variant.reflection(),
            seed: stage_seed,
            randomize_initial_phase: true,
            parallel: cfg.parallel,
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
        rng.set_stream(u64::MAX - 1);
        let open_episodes = (0..venv.len()).map(|env| empty_episode(0, env)).collect();
        Ok(Self {
            cfg,
            variant,
            stage,
            params,
            opt,
            iteration,
            curriculum_total,
            venv,
            rng,
            failed: 0,
            open_episodes,
            finished: VecDeque::new(),
            episode_counter: 0,
        })
    }

    pub fn curriculum(&self) -> CurriculumState {
        CurriculumState::new(self.iteration, self.curriculum_total)
    }

    /// One collect-and-update iteration.
    pub fn iterate(&mut self) -> Result<MetricsRow, PpoError> {
        let cur = self.curriculum();
        self.venv.set_curriculum(cur);
        let log_dataset = self.stage == Stage::Two;
        let open = &mut self.open_episodes;
        let finished = &mut self.finished;
        let counter = &mut self.episode_counter;
        let cap = self.cfg.dataset_episodes;
        let (buffer, stats) = collect_rollouts(&mut self.venv, &self.params, &self.cfg.ppo, &mut self.rng, |res| {
            if log_dataset {
                record_dataset(res, open, finished, counter, cap);
            }
        })?;
        let update = ppo_update(&mut self.params, &mut self.opt, &buffer, &self.cfg.ppo, &mut self.rng)?;
        if update.minibatches == 0 || !self.params.is_finite() {
            self.failed += 1;
            if self.failed >= self.cfg.max_failed_iterations {
                return Err(PpoError::Diverged(format!(
                    "{} consecutive iterations without a finite update",
                    self.failed
                )));
            }
        } else {
            self.failed = 0;
        }
        let row = MetricsRow {
            iteration: self.iteration,
            stage: self.stage,
            penalty_scale: cur.penalty_scale(),
            returns: std::array::from_fn(|t| stats.mean_return(t)),
            rewards: std::array::from_fn(|t| {
                (stats.samples[t] > 0).then(|| stats.reward_sum[t] / stats.samples[t] as f64)
            }),
            episodes: stats.total_episodes(),
            episode_length: stats.mean_length(),
            survival: stats.survival_fraction(),
            policy_loss: update.policy_loss,
            value_loss: update.value_loss,
            entropy: update.entropy,
            approx_kl: update.approx_kl,
            clip_fraction: update.clip_fraction,
            grad_norm: update.grad_norm,
            skipped: update.skipped,
        };
        self.iteration += 1;
        Ok(row)
    }

    /// Parameters, optimizer moments and run metadata.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "variant": self.variant,
            "stage": self.stage,
            "iteration": self.iteration,
            "curriculum_total": self.curriculum_total,
            "seed": self.cfg.seed,
        });
        let mut ckpt = self.params.to_checkpoint(meta);
        ckpt.extend(self.opt.export("opt"));
        ckpt
    }

    /// Finished stage-two episodes, oldest first.
    pub fn dataset(&self) -> Vec<DatasetEpisode> {
        self.finished.iter().cloned().collect()
    }

    /// Runs `iterations` iterations, streaming metrics to `out/metrics_<stage>.csv`
    /// and checkpoints to `out/<stage>.qfck` when `out` is given. A checkpoint
    /// is only written while the parameters are finite.
    pub fn run(
        &mut self,
        iterations: usize,
        out: Option<&Path>,
        mut on_row: impl FnMut(&MetricsRow),
    ) -> Result<Vec<MetricsRow>, PpoError> {
        let names = StageFiles::new(out, self.stage);
        let mut metrics = match &names {
            Some(n) => {
                std::fs::create_dir_all(&n.dir)?;
                let mut f = std::io::BufWriter::new(std::fs::File::create(&n.metrics)?);
                writeln!(f, "{METRICS_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        let mut rows = Vec::with_capacity(iterations);
        for k in 0..iterations {
            let row = self.iterate()?;
            on_row(&row);
            if let Some(f) = &mut metrics {
                writeln!(f, "{}", row.to_csv())?;
                f.flush()?;
            }
            rows.push(row);
            let periodic = self.cfg.checkpoint_every > 0 && (k + 1) % self.cfg.checkpoint_every == 0;
            if let Some(n) = &names {
                if (periodic || k + 1 == iterations) && self.params.is_finite() {
                    self.checkpoint().save(&n.checkpoint)?;
                }
            }
        }
        if let (Some(n), Stage::Two) = (&names, self.stage) {
            write_dataset(&n.dir.join("disc_dataset.jsonl"), &self.dataset())?;
        }
        Ok(rows)
    }
}

struct StageFiles {
    dir: PathBuf,
    metrics: PathBuf,
    checkpoint: PathBuf,
}

impl StageFiles {
    fn new(out: Option<&Path>, stage: Stage) -> Option<Self> {
        let tag = match stage {
            Stage::One => "stage1",
            Stage::Two => "stage2",
        };
        out.map(|d| Self {
            dir: d.to_path_buf(),
            metrics: d.join(format!("metrics_{tag}.csv")),
            checkpoint: d.join(format!("{tag}.qfck")),
        })
    }
}

fn empty_episode(episode: usize, env: usize) -> DatasetEpisode {
    DatasetEpisode { episode, env, positions: Vec::new(), velocities: Vec::new(), labels: Vec::new() }
}

fn record_dataset(
    results: &[StepResult],
    open: &mut [DatasetEpisode],
    finished: &mut VecDeque<DatasetEpisode>,
    counter: &mut usize,
    cap: usize,
) {
    for (i, r) in results.iter().enumerate() {
        let ep = &mut open[i];
        ep.positions.push(r.info.joint_positions);
        ep.velocities.push(r.info.joint_velocities);
        ep.labels.push(r.info.label);
        if r.done {
            let mut done = std::mem::replace(ep, empty_episode(0, i));
            done.episode = *counter;
            *counter += 1;
            if cap > 0 {
                if finished.len() == cap {
                    finished.pop_front();
                }
                finished.push_back(done);
            }
        }
    }
}

/// One JSON episode per line.
pub fn write_dataset(path: &Path, episodes: &[DatasetEpisode]) -> Result<(), PpoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ep in episodes {
        serde_json::to_writer(&mut f, ep)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetEpisode>, PpoError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| PpoError::Config(format!("{}: line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Result of one training stage.
pub struct StageOutcome {
    pub params: HierarchicalParams<f32>,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

/// Stage one: static status groups, reflection initialization unless the
/// variant disables it, penalties ramped over `cfg.ppo.iterations`.
pub fn train_stage1(cfg: &TrainConfig, variant: TrainVariant, out: Option<&Path>) -> Result<StageOutcome, PpoError> {
    let mut t = Trainer::new(cfg.clone(), variant)?;
    let metrics = t.run(cfg.ppo.iterations, out, |_| {})?;
    Ok(StageOutcome { checkpoint: t.checkpoint(), params: t.params, metrics })
}

/// Stage two from a stage-one checkpoint: every environment follows a random
/// fault schedule and heads are chosen by the true status each tick. Also
/// returns the logged episodes for discriminator training.
pub fn train_stage2(
    cfg: &TrainConfig,
    stage1: &Checkpoint,
    out: Option<&Path>,
) -> Result<(StageOutcome, Vec<DatasetEpisode>), PpoError> {
    let mut t = Trainer::resume(cfg.clone(), stage1, Stage::Two)?;
    let metrics = t.run(cfg.stage2_iterations, out, |_| {})?;
    let dataset = t.dataset();
    Ok((StageOutcome { checkpoint: t.checkpoint(), params: t.params, metrics }, dataset))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(iterations: usize) -> TrainConfig {
        TrainConfig {
            arch: PolicyArch {
                front_hidden: vec![16],
                latent: 8,
                head_hidden: vec![8],
                critic_front_hidden: vec![16],
                critic_latent: 8,
                critic_head_hidden: vec![8],
                ..Default::default()
            },
            ppo: PpoConfig { iterations, horizon: 8, epochs: 2, minibatches: 2, ..Default::default() },
            env: EnvConfig { episode_steps: 20, ..Default::default() },
            envs: 8,
            seed: 3,
            stage2_iterations: 3,
            checkpoint_every: 0,
            ..Default::default()
        }
    }

    #[test]
    fn curriculum_starts_at_zero_and_ramps() {
        let mut t = Trainer::new(tiny(4), TrainVariant::Ours).unwrap();
        let rows = t.run(4, None, |_| {}).unwrap();
        let scales: Vec<f64> = rows.iter().map(|r| r.penalty_scale).collect();
        assert_eq!(scales, vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn metrics_are_reproducible() {
        let a = train_stage1(&tiny(3), TrainVariant::Ours, None).unwrap();
        let b = train_stage1(&tiny(3), TrainVariant::Ours, None).unwrap();
        let csv = |m: &[MetricsRow]| m.iter().map(MetricsRow::to_csv).collect::<Vec<_>>();
        assert_eq!(csv(&a.metrics), csv(&b.metrics));
        assert_eq!(a.params.flatten(), b.params.flatten());
    }

    #[test]
    fn normal_variant_uses_one_head_on_healthy_envs() {
        let out = train_stage1(&tiny(2), TrainVariant::Normal, None).unwrap();
        assert_eq!(out.params.heads.len(), 1);
        for row in &out.metrics {
            assert!(row.rewards[1].is_none() && row.rewards[2].is_none());
        }
        assert!(train_stage2(&tiny(2), &out.checkpoint, None).is_err());
    }

    #[test]
    fn stage_two_continues_iterations_and_logs_labels() {
        let s1 = train_stage1(&tiny(2), TrainVariant::Ours, None).unwrap();
        let cfg = TrainConfig {
            env: EnvConfig {
                episode_steps: 20,
                schedule: crate::env::ScheduleConfig { onset_window: [0.05, 0.35], ..Default::default() },
                ..Default::default()
            },
            ..tiny(2)
        };
        let (s2, data) = train_stage2(&cfg, &s1.checkpoint, None).unwrap();
        assert_eq!(s2.metrics[0].iteration, 2);
        assert_eq!(s2.metrics[0].penalty_scale, 1.0);
        assert_eq!(s2.checkpoint.metadata["iteration"], 5);
        assert!(!data.is_empty());
        for ep in &data {
            assert_eq!(ep.positions.len(), ep.labels.len());
            assert_eq!(ep.velocities.len(), ep.labels.len());
        }
        // Every full-length episode starts healthy and later sees a fault.
        let full: Vec<&DatasetEpisode> = data.iter().filter(|e| e.labels.len() == 20).collect();
        for ep in &full {
            assert_eq!(ep.labels[0], LegStatus::Health);
        }
    }

    #[test]
    fn checkpoint_resume_restores_state() {
        let mut t = Trainer::new(tiny(6), TrainVariant::Ours).unwrap();
        t.run(2, None, |_| {}).unwrap();
        let ckpt = t.checkpoint();
        let r = Trainer::resume(tiny(6), &ckpt, Stage::One).unwrap();
        assert_eq!(r.iteration, 2);
        assert_eq!(r.curriculum(), t.curriculum());
        assert_eq!(r.params, t.params);
        // Moments are stored in single precision.
        assert_eq!(r.opt.steps, t.opt.steps);
        for (a, b) in r.opt.first_moment.iter().flatten().zip(t.opt.first_moment.iter().flatten()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-30));
        }
    }

    #[test]
    fn run_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny(2), TrainVariant::Mix).unwrap();
        t.run(2, Some(dir.path()), |_| {}).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics_stage1.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
        let ckpt = Checkpoint::load(&dir.path().join("stage1.qfck")).unwrap();
        assert_eq!(ckpt.metadata["variant"], "mix");
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ep = DatasetEpisode {
            episode: 1,
            env: 2,
            positions: vec![[0.5; JOINTS]],
            velocities: vec![[-0.25; JOINTS]],
            labels: vec![LegStatus::Weak],
        };
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, std::slice::from_ref(&ep)).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), vec![ep]);
    }
}
