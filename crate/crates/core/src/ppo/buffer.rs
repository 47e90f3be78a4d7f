use rand::Rng;

use super::{compute_gae, PpoConfig, PpoError};
use crate::env::{Observation, StepResult, Termination, VecEnv, OBS_DIM};
use crate::nets::Scalar;
use crate::policy::{ActMode, HierarchicalParams, TaskId, TASK_COUNT};
use crate::sim::JOINTS;

/// Samples collected under one task, in (tick, env) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segment {
    /// Row-major `len × OBS_DIM`.
    pub obs: Vec<f64>,
    /// Row-major `len × JOINTS`, raw policy outputs.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub tasks: Vec<TaskId>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn obs_row(&self, k: usize) -> &[f64] {
        &self.obs[k * OBS_DIM..(k + 1) * OBS_DIM]
    }

    pub fn action_row(&self, k: usize) -> &[f64] {
        &self.actions[k * JOINTS..(k + 1) * JOINTS]
    }
}

/// Per-task segments of one iteration's experience.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub gamma: f64,
    pub lambda: f64,
    /// Indexed by task.
    pub segments: Vec<Segment>,
    /// Critic value of each environment's state after the last tick.
    pub bootstrap_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that every sample sits in its own task's segment.
    pub fn validate(&self) -> Result<(), PpoError> {
        for (i, seg) in self.segments.iter().enumerate() {
            if let Some(t) = seg.tasks.iter().find(|t| t.index() != i) {
                return Err(PpoError::TaskMismatch { env: usize::MAX, env_task: t.index(), policy_task: i });
            }
        }
        Ok(())
    }

    /// Keeps only the samples of the given tasks.
    pub fn retain_tasks(&mut self, keep: &[TaskId]) {
        for (i, seg) in self.segments.iter_mut().enumerate() {
            if !keep.iter().any(|t| t.index() == i) {
                *seg = Segment::default();
            }
        }
    }
}

/// Episode outcomes and reward sums seen during one collection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutStats {
    /// Finished episodes per task of their final tick.
    pub episodes: [usize; TASK_COUNT],
    pub survived: [usize; TASK_COUNT],
    pub return_sum: [f64; TASK_COUNT],
    pub length_sum: [f64; TASK_COUNT],
    /// Unscaled reward summed over all collected ticks, per task.
    pub reward_sum: [f64; TASK_COUNT],
    pub samples: [usize; TASK_COUNT],
}

impl RolloutStats {
    pub fn mean_return(&self, task: usize) -> Option<f64> {
        (self.episodes[task] > 0).then(|| self.return_sum[task] / self.episodes[task] as f64)
    }

    pub fn total_episodes(&self) -> usize {
        self.episodes.iter().sum()
    }

    pub fn mean_length(&self) -> Option<f64> {
        let n = self.total_episodes();
        (n > 0).then(|| self.length_sum.iter().sum::<f64>() / n as f64)
    }

    pub fn survival_fraction(&self) -> Option<f64> {
        let n = self.total_episodes();
        (n > 0).then(|| self.survived.iter().sum::<usize>() as f64 / n as f64)
    }
}

/// Steps `venv` for `cfg.horizon` ticks with each environment acting under
/// the head of its current status, then computes advantages per environment
/// and routes samples by task. `on_step` sees every tick's results.
///
/// Episodes that end by running out of time bootstrap from the critic value
/// of their final observation.
pub fn collect_rollouts<T: Scalar, R: Rng + ?Sized>(
    venv: &mut VecEnv,
    params: &HierarchicalParams<T>,
    cfg: &PpoConfig,
    rng: &mut R,
    mut on_step: impl FnMut(&[StepResult]),
) -> Result<(RolloutBuffer, RolloutStats), PpoError> {
    let n = venv.len();
    let h = cfg.horizon;
    let mut obs: Vec<Vec<Observation>> = Vec::with_capacity(h);
    let mut tasks: Vec<Vec<TaskId>> = Vec::with_capacity(h);
    let mut actions: Vec<Vec<[f64; JOINTS]>> = Vec::with_capacity(h);
    let mut log_probs: Vec<Vec<f64>> = Vec::with_capacity(h);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(h);
    let mut rewards: Vec<Vec<f64>> = Vec::with_capacity(h);
    let mut dones: Vec<Vec<bool>> = Vec::with_capacity(h);
    let mut stats = RolloutStats::default();

    for _ in 0..h {
        let o = venv.observations().to_vec();
        let t: Vec<TaskId> = venv.statuses().into_iter().map(TaskId::from).collect();
        let outs = params.act_batch(&o, &t, rng, ActMode::Stochastic)?;
        let a: Vec<[f64; JOINTS]> = outs.iter().map(|x| x.action).collect();
        let results = venv.step(&a)?;
        on_step(&results);

        let mut r: Vec<f64> = results.iter().map(|s| s.reward * cfg.reward_scale).collect();
        let timeouts: Vec<usize> = (0..n).filter(|&i| results[i].info.termination == Termination::Survival).collect();
        if !timeouts.is_empty() {
            let term_obs: Vec<Observation> =
                timeouts.iter().map(|&i| results[i].info.terminal_obs.expect("finished episode")).collect();
            let term_tasks: Vec<TaskId> = timeouts.iter().map(|&i| TaskId::from(results[i].info.label)).collect();
            let v = params.values_for(&term_obs, &term_tasks)?;
            for (&i, v) in timeouts.iter().zip(v) {
                r[i] += cfg.gamma * v;
            }
        }
        for (i, s) in results.iter().enumerate() {
            let task = t[i].index();
            stats.reward_sum[task] += s.reward;
            stats.samples[task] += 1;
            if s.done {
                let label = TaskId::from(s.info.label).index();
                stats.episodes[label] += 1;
                stats.return_sum[label] += s.info.episode_return.unwrap_or(0.0);
                stats.length_sum[label] += s.info.step as f64;
                if s.info.termination == Termination::Survival {
                    stats.survived[label] += 1;
                }
            }
        }
        obs.push(o);
        tasks.push(t);
        actions.push(a);
        log_probs.push(outs.iter().map(|x| x.log_prob).collect());
        values.push(outs.iter().map(|x| x.value).collect());
        rewards.push(r);
        dones.push(results.iter().map(|s| s.done).collect());
    }

    let last_tasks: Vec<TaskId> = venv.statuses().into_iter().map(TaskId::from).collect();
    let bootstrap = params.values_for(venv.observations(), &last_tasks)?;

    let mut segments = vec![Segment::default(); TASK_COUNT];
    let mut adv = vec![vec![0.0; n]; h];
    let mut ret = vec![vec![0.0; n]; h];
    for i in 0..n {
        let r: Vec<f64> = (0..h).map(|t| rewards[t][i]).collect();
        let mut v: Vec<f64> = (0..h).map(|t| values[t][i]).collect();
        v.push(bootstrap[i]);
        let d: Vec<bool> = (0..h).map(|t| dones[t][i]).collect();
        let (a, rt) = compute_gae(&r, &v, &d, cfg.gamma, cfg.lambda)?;
        for t in 0..h {
            adv[t][i] = a[t];
            ret[t][i] = rt[t];
        }
    }
    for t in 0..h {
        for i in 0..n {
            let seg = &mut segments[tasks[t][i].index()];
            seg.obs.extend_from_slice(&obs[t][i].values);
            seg.actions.extend_from_slice(&actions[t][i]);
            seg.log_probs.push(log_probs[t][i]);
            seg.values.push(values[t][i]);
            seg.rewards.push(rewards[t][i]);
            seg.dones.push(dones[t][i]);
            seg.tasks.push(tasks[t][i]);
            seg.advantages.push(adv[t][i]);
            seg.returns.push(ret[t][i]);
        }
    }
    let buffer = RolloutBuffer { gamma: cfg.gamma, lambda: cfg.lambda, segments, bootstrap_values: bootstrap };
    Ok((buffer, stats))
}
