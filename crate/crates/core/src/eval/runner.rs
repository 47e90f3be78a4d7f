use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CommandDist, EvalError, Protocol};
use crate::discriminator::{DiscriminatorParams, StatusTracker};
use crate::env::{
    reset_env, sample_fault_schedule, step_env, Command, CurriculumState, EnvConfig, EnvStep, EpisodeState,
    ScheduleConfig, Stage, Termination,
};
use crate::policy::{ActMode, HierarchicalParams, Layout, SelectionMode, TaskId};
use crate::sim::{LegStatus, JOINTS};

/// A policy together with the rule that picks its head each tick.
#[derive(Clone, Copy, Debug)]
pub struct Controller<'a> {
    pub policy: &'a HierarchicalParams<f32>,
    pub discriminator: Option<&'a DiscriminatorParams<f32>>,
    pub switching: SelectionMode,
    pub hysteresis: usize,
}

impl<'a> Controller<'a> {
    pub fn oracle(policy: &'a HierarchicalParams<f32>) -> Self {
        Self { policy, discriminator: None, switching: SelectionMode::Oracle, hysteresis: 1 }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let needs_detector =
            self.switching == SelectionMode::Discriminator && self.policy.layout == Layout::Hierarchical;
        if needs_detector && self.discriminator.is_none() {
            return Err(EvalError::Mismatch(
                "discriminator switching on a multi-head policy needs a discriminator checkpoint".into(),
            ));
        }
        if self.hysteresis == 0 {
            return Err(EvalError::Config("hysteresis must be at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluation episode: where its randomness comes from, how the leg
/// status evolves and the command distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub seed: u64,
    /// Stream of the seed used by this episode; distinct per episode.
    pub stream: u64,
    pub protocol: Protocol,
    pub command: CommandDist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub spec: EpisodeSpec,
    pub command: Command,
    pub termination: Termination,
    pub ticks: usize,
    /// `(tick, status)` whenever the true status changed.
    pub transitions: Vec<(usize, LegStatus)>,
    /// `(tick, head)` whenever the selected head changed.
    pub switches: Vec<(usize, TaskId)>,
}

impl EpisodeOutcome {
    pub fn survived(&self) -> bool {
        self.termination == Termination::Survival
    }

    /// Ticks from each true transition until the selected head matched it,
    /// `None` when it never did before the next transition or the end.
    pub fn switch_latencies(&self) -> Vec<Option<usize>> {
        self.transitions
            .iter()
            .enumerate()
            .map(|(k, &(t, status))| {
                let end = self.transitions.get(k + 1).map_or(self.ticks, |n| n.0);
                self.switches
                    .iter()
                    .filter(|(s, h)| *s >= t && *s < end && h.status() == status)
                    .map(|(s, _)| s - t)
                    .next()
            })
            .collect()
    }
}

/// Everything known about one environment right after a tick.
pub struct TickView<'a> {
    /// Index into the spec list.
    pub episode: usize,
    /// Zero-based index of the tick just simulated.
    pub tick: usize,
    pub state: &'a EpisodeState,
    pub step: &'a EnvStep,
    pub action: &'a [f64; JOINTS],
    /// Head that produced `action`.
    pub head: TaskId,
    /// Discriminator output after observing this tick.
    pub probabilities: Option<[f64; 3]>,
}

fn start_episode(env: &EnvConfig, spec: &EpisodeSpec) -> Result<(EpisodeState, Command), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.stream);
    let length = env.episode_length();
    let mut ep = match spec.protocol {
        Protocol::FromStart(status) => reset_env(env, &mut rng, status, Stage::One)?,
        _ => reset_env(env, &mut rng, LegStatus::Health, Stage::One)?,
    };
    let [lo, hi] = spec.command.bounds();
    let vx = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let command = Command { vx, wz: spec.command.wz };
    ep.command = command;
    let schedule = match spec.protocol {
        Protocol::Fault(status) => {
            let single = ScheduleConfig { onset_window: env.schedule.onset_window, ..ScheduleConfig::single(status) };
            Some(sample_fault_schedule(&mut rng, &single, length))
        }
        Protocol::Mixed => Some(sample_fault_schedule(&mut rng, &env.schedule, length)),
        Protocol::HealthOnly | Protocol::FromStart(_) => None,
    };
    if let Some(s) = schedule {
        ep.set_schedule(env, s);
    }
    Ok((ep, command))
}

struct Slot {
    index: usize,
    ep: EpisodeState,
    tracker: Option<StatusTracker<f32>>,
    head: TaskId,
    /// Oracle head waiting for its delay to run out: `(head, due tick)`.
    pending: Option<(TaskId, usize)>,
    delays: ChaCha8Rng,
    outcome: EpisodeOutcome,
    last_label: LegStatus,
}

const DELAY_STREAM: u64 = 1 << 63;

/// Runs every episode in `specs` to termination with deterministic actions,
/// `batch` environments at a time, calling `observe` after every tick.
///
/// Each episode draws from its own seeded stream, so the outcomes do not
/// depend on the batch size.
pub fn run_episodes(
    env: &EnvConfig,
    controller: &Controller,
    specs: &[EpisodeSpec],
    batch: usize,
    observe: impl FnMut(&TickView),
) -> Result<Vec<EpisodeOutcome>, EvalError> {
    run_episodes_with_delay(env, controller, specs, batch, 0, observe)
}

/// Like [`run_episodes`], but under oracle switching the head follows each
/// true status change only after a delay drawn uniformly from
/// `0..=max_delay` ticks. The delays come from their own stream, so the
/// episodes themselves are the same as without delay.
pub fn run_episodes_with_delay(
    env: &EnvConfig,
    controller: &Controller,
    specs: &[EpisodeSpec],
    batch: usize,
    max_delay: usize,
    mut observe: impl FnMut(&TickView),
) -> Result<Vec<EpisodeOutcome>, EvalError> {
    controller.validate()?;
    let cur = CurriculumState::complete();
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let mut outcomes = Vec::with_capacity(specs.len());
    for (chunk_start, chunk) in
        (0..specs.len()).step_by(batch.max(1)).map(|s| (s, &specs[s..(s + batch).min(specs.len())]))
    {
        let mut slots = Vec::with_capacity(chunk.len());
        for (k, spec) in chunk.iter().enumerate() {
            let (ep, command) = start_episode(env, spec)?;
            // Under oracle switching a supplied discriminator still runs so its
            // output can be observed; it just does not pick the head.
            let tracker = controller.discriminator.map(|d| StatusTracker::new(d.clone(), controller.hysteresis));
            let mut delays = ChaCha8Rng::seed_from_u64(spec.seed);
            delays.set_stream(spec.stream ^ DELAY_STREAM);
            let mut pending = None;
            let head = match controller.switching {
                SelectionMode::Oracle if max_delay > 0 && ep.status() != LegStatus::Health => {
                    pending = Some((TaskId::from(ep.status()), delays.random_range(0..=max_delay)));
                    TaskId::HEALTH
                }
                SelectionMode::Oracle => TaskId::from(ep.status()),
                SelectionMode::Discriminator => TaskId::HEALTH,
            };
            let last_label = ep.status();
            let transitions = if last_label == LegStatus::Health { Vec::new() } else { vec![(0, last_label)] };
            let switches = if head == TaskId::HEALTH { Vec::new() } else { vec![(0, head)] };
            slots.push(Slot {
                index: chunk_start + k,
                ep,
                tracker,
                head,
                pending,
                delays,
                outcome: EpisodeOutcome {
                    spec: *spec,
                    command,
                    termination: Termination::Running,
                    ticks: 0,
                    transitions,
                    switches,
                },
                last_label,
            });
        }
        let mut active: Vec<usize> = (0..slots.len()).collect();
        while !active.is_empty() {
            let obs = active.iter().map(|&i| slots[i].ep.observation(env)).collect::<Result<Vec<_>, _>>()?;
            let heads: Vec<TaskId> = active.iter().map(|&i| slots[i].head).collect();
            let acts = controller.policy.act_batch(&obs, &heads, &mut dummy, ActMode::Deterministic)?;
            let mut still = Vec::with_capacity(active.len());
            for (&i, act) in active.iter().zip(&acts) {
                let slot = &mut slots[i];
                let tick = slot.ep.step;
                let step = step_env(env, &mut slot.ep, &act.action, &cur)?;
                if step.label != slot.last_label {
                    slot.outcome.transitions.push((tick, step.label));
                    slot.last_label = step.label;
                    if max_delay > 0 {
                        let due = slot.ep.step + slot.delays.random_range(0..=max_delay);
                        slot.pending = Some((TaskId::from(step.label), due));
                    }
                }
                let probabilities = match &mut slot.tracker {
                    Some(t) => Some(t.push(&slot.ep.robot.q, &slot.ep.robot.qd)?.probabilities),
                    None => None,
                };
                observe(&TickView {
                    episode: slot.index,
                    tick,
                    state: &slot.ep,
                    step: &step,
                    action: &act.action,
                    head: slot.head,
                    probabilities,
                });
                slot.outcome.ticks = slot.ep.step;
                if step.termination != Termination::Running {
                    slot.outcome.termination = step.termination;
                    continue;
                }
                let next = match (controller.switching, &slot.tracker) {
                    (SelectionMode::Oracle, _) if max_delay > 0 => match slot.pending {
                        Some((head, due)) if due <= slot.ep.step => {
                            slot.pending = None;
                            head
                        }
                        _ => slot.head,
                    },
                    (SelectionMode::Oracle, _) => TaskId::from(slot.ep.status()),
                    (SelectionMode::Discriminator, Some(t)) => TaskId::from(t.committed()),
                    (SelectionMode::Discriminator, None) => TaskId::HEALTH,
                };
                if next != slot.head {
                    slot.outcome.switches.push((slot.ep.step, next));
                    slot.head = next;
                }
                still.push(i);
            }
            active = still;
        }
        outcomes.extend(slots.into_iter().map(|s| s.outcome));
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyArch;

    fn tiny_policy(layout: Layout) -> HierarchicalParams<f32> {
        let arch = PolicyArch {
            front_hidden: vec![8],
            latent: 4,
            head_hidden: vec![4],
            critic_front_hidden: vec![8],
            critic_latent: 4,
            critic_head_hidden: vec![4],
            ..Default::default()
        };
        HierarchicalParams::new(arch, layout, &mut ChaCha8Rng::seed_from_u64(9))
    }

    fn short_env() -> EnvConfig {
        EnvConfig { episode_steps: 60, ..Default::default() }
    }

    fn specs(protocol: Protocol, n: usize) -> Vec<EpisodeSpec> {
        (0..n).map(|k| EpisodeSpec { seed: 3, stream: k as u64, protocol, command: CommandDist::MIDDLE }).collect()
    }

    #[test]
    fn outcomes_do_not_depend_on_batch_size() {
        let p = tiny_policy(Layout::Hierarchical);
        let env = short_env();
        let c = Controller::oracle(&p);
        let s = specs(Protocol::Mixed, 5);
        let a = run_episodes(&env, &c, &s, 5, |_| {}).unwrap();
        let b = run_episodes(&env, &c, &s, 2, |_| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn health_protocol_has_no_transitions() {
        let p = tiny_policy(Layout::Hierarchical);
        let out = run_episodes(&short_env(), &Controller::oracle(&p), &specs(Protocol::HealthOnly, 4), 4, |v| {
            assert_eq!(v.step.label, LegStatus::Health);
            assert_eq!(v.head, TaskId::HEALTH);
        })
        .unwrap();
        assert!(out.iter().all(|o| o.transitions.is_empty() && o.switches.is_empty()));
    }

    #[test]
    fn oracle_head_follows_the_scheduled_status() {
        let p = tiny_policy(Layout::Hierarchical);
        let env = EnvConfig { episode_steps: 400, ..Default::default() };
        let out = run_episodes(&env, &Controller::oracle(&p), &specs(Protocol::Fault(LegStatus::Weak), 3), 3, |v| {
            assert_eq!(v.head, TaskId::from(v.step.label), "tick {}", v.tick);
        })
        .unwrap();
        for o in out.iter().filter(|o| !o.transitions.is_empty()) {
            assert_eq!(o.switch_latencies(), vec![Some(0)]);
        }
    }

    #[test]
    fn fault_from_start_is_recorded_at_tick_zero() {
        let p = tiny_policy(Layout::Hierarchical);
        let out = run_episodes(
            &short_env(),
            &Controller::oracle(&p),
            &specs(Protocol::FromStart(LegStatus::Limit), 2),
            2,
            |_| {},
        )
        .unwrap();
        for o in &out {
            assert_eq!(o.transitions, vec![(0, LegStatus::Limit)]);
            assert_eq!(o.switches, vec![(0, TaskId::LIMIT)]);
        }
    }

    #[test]
    fn delayed_oracle_switches_within_the_delay() {
        let p = tiny_policy(Layout::Hierarchical);
        let env = EnvConfig { episode_steps: 400, ..Default::default() };
        let s = specs(Protocol::Mixed, 12);
        let plain = run_episodes(&env, &Controller::oracle(&p), &s, 12, |_| {}).unwrap();
        let delayed = run_episodes_with_delay(&env, &Controller::oracle(&p), &s, 12, 20, |_| {}).unwrap();
        let mut longest = 0;
        for (a, b) in plain.iter().zip(&delayed) {
            assert_eq!(a.command, b.command);
            for (k, l) in b.switch_latencies().into_iter().enumerate() {
                let window_end = b.transitions.get(k + 1).map_or(b.ticks, |n| n.0);
                match l {
                    Some(l) => {
                        assert!(l <= 21, "latency {l}");
                        longest = longest.max(l);
                    }
                    None => assert!(window_end - b.transitions[k].0 <= 21),
                }
            }
        }
        assert!(longest > 1);
    }

    #[test]
    fn multi_head_discriminator_mode_requires_a_detector() {
        let p = tiny_policy(Layout::Hierarchical);
        let c = Controller { switching: SelectionMode::Discriminator, ..Controller::oracle(&p) };
        assert!(matches!(
            run_episodes(&short_env(), &c, &specs(Protocol::HealthOnly, 1), 1, |_| {}),
            Err(EvalError::Mismatch(_))
        ));
        let single = tiny_policy(Layout::Single);
        let c = Controller { switching: SelectionMode::Discriminator, ..Controller::oracle(&single) };
        assert!(run_episodes(&short_env(), &c, &specs(Protocol::HealthOnly, 1), 1, |_| {}).is_ok());
    }
}
