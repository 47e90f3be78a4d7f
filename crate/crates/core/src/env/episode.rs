use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_observation, check_termination, compute_reward, sample_fault_schedule, Command, CurriculumState, DrSample,
    EnvConfig, EnvError, FaultSchedule, Observation, RewardContext, RewardTerms, Stage, Termination, OBS_DIM,
};
use crate::sim::{ContactState, FaultState, LegStatus, RobotState, SimError, Simulator, TickReport, JOINTS};

/// Complete mutable state of one environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub robot: RobotState,
    pub contacts: ContactState,
    pub fault: FaultState,
    pub command: Command,
    pub prev_action: [f64; JOINTS],
    /// Ticks completed in this episode.
    pub step: usize,
    pub schedule: Option<FaultSchedule>,
    pub dr: DrSample,
    /// Status group this environment belongs to.
    pub task: LegStatus,
    pub stage: Stage,
    /// Simulator carrying this episode's randomized mass and friction.
    pub sim: Simulator,
    pub episode_return: f64,
}

impl EpisodeState {
    /// Status in force for the next tick.
    pub fn status(&self) -> LegStatus {
        self.fault.status()
    }

    pub fn observation(&self, cfg: &EnvConfig) -> Result<Observation, EnvError> {
        build_observation(cfg, &self.robot, &self.prev_action, &self.command)
    }

    /// Brings the fault state in line with the schedule for the current step.
    pub(crate) fn apply_schedule(&mut self, cfg: &EnvConfig) {
        let Some(schedule) = &self.schedule else { return };
        match schedule.status_at_step(self.step) {
            LegStatus::Health => {
                if self.fault.status() != LegStatus::Health {
                    self.fault.clear(&self.robot);
                }
            }
            s => self.fault.set_status(cfg.fault_leg, s, &self.robot),
        }
    }

    /// Replaces the schedule and re-applies it at the current step.
    pub fn set_schedule(&mut self, cfg: &EnvConfig, schedule: FaultSchedule) {
        self.schedule = Some(schedule);
        self.apply_schedule(cfg);
    }
}

/// Starts a new episode.
///
/// Stage one gives fault groups their status from the first tick; stage two
/// starts healthy and samples a fault schedule.
pub fn reset_env<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    rng: &mut R,
    task: LegStatus,
    stage: Stage,
) -> Result<EpisodeState, EnvError> {
    let dr = cfg.randomization.sample(rng);
    let model = cfg.model.with_added_mass(dr.added_mass);
    let mut contact = cfg.contact.clone();
    contact.friction = dr.friction;
    let sim = Simulator::new(model, cfg.gains.clone(), contact)?;
    let q = std::array::from_fn(|j| sim.model.clamp_to_limits(j, sim.model.default_pose[j] + dr.joint_offsets[j]));
    let robot = RobotState::standing(&sim.model, q);

    let mut fault = FaultState { lock_mode: cfg.lock_mode, ..FaultState::healthy() };
    let schedule = match stage {
        Stage::One => {
            if task != LegStatus::Health {
                fault.set_status(cfg.fault_leg, task, &robot);
            }
            None
        }
        Stage::Two => Some(sample_fault_schedule(rng, &cfg.schedule, cfg.episode_length())),
    };
    let mut ep = EpisodeState {
        robot,
        contacts: ContactState::default(),
        fault,
        command: dr.command,
        prev_action: [0.0; JOINTS],
        step: 0,
        schedule,
        dr,
        task,
        stage,
        sim,
        episode_return: 0.0,
    };
    ep.apply_schedule(cfg);
    Ok(ep)
}

/// Copies the paired healthy environment's robot state, contacts, previous
/// action and command into a fault environment that is starting an episode,
/// then re-applies the fault at the copied state.
pub fn reflect_init(health: &EpisodeState, fault_env: &mut EpisodeState) -> Result<(), EnvError> {
    if health.task != LegStatus::Health {
        return Err(EnvError::Pairing(format!("source environment belongs to the {} group", health.task)));
    }
    if fault_env.task == LegStatus::Health {
        return Err(EnvError::Pairing("target environment is not a fault environment".into()));
    }
    if fault_env.step != 0 {
        return Err(EnvError::Pairing(format!("target is {} ticks into its episode", fault_env.step)));
    }
    let (leg, status) =
        fault_env.fault.faulty_leg().ok_or_else(|| EnvError::Pairing("target environment carries no fault".into()))?;
    fault_env.robot = health.robot.clone();
    fault_env.contacts = health.contacts.clone();
    fault_env.prev_action = health.prev_action;
    fault_env.command = health.command;
    fault_env.fault.clear(&fault_env.robot);
    fault_env.fault.set_status(leg, status, &fault_env.robot);
    Ok(())
}

/// Result of one control tick of a single environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    /// Observation after the tick; all zeros when the state diverged.
    pub obs: Observation,
    pub reward: f64,
    pub terms: RewardTerms,
    pub termination: Termination,
    /// Status that governed the tick just simulated.
    pub label: LegStatus,
    /// `None` when the simulation diverged during the tick.
    pub report: Option<TickReport>,
}

/// Advances one environment by one control tick. Does not reset.
pub fn step_env(
    cfg: &EnvConfig,
    ep: &mut EpisodeState,
    raw_action: &[f64; JOINTS],
    cur: &CurriculumState,
) -> Result<EnvStep, EnvError> {
    let label = ep.fault.status();
    let (clipped, target) = cfg.scaled_action(raw_action);
    let report = match ep.sim.simulate_control_tick(&ep.robot, &ep.contacts, &target, &ep.fault) {
        Ok((robot, report)) => {
            ep.robot = robot;
            ep.contacts = report.contacts.clone();
            Some(report)
        }
        Err(SimError::Diverged) => None,
        Err(e) => return Err(e.into()),
    };
    ep.step += 1;

    let Some(report) = report else {
        ep.prev_action = clipped;
        return Ok(EnvStep {
            obs: Observation { values: [0.0; OBS_DIM] },
            reward: 0.0,
            terms: RewardTerms::default(),
            termination: Termination::Death,
            label,
            report: None,
        });
    };

    let ctx = RewardContext { model: &ep.sim.model, action: &clipped, prev_action: &ep.prev_action };
    let terms = compute_reward(&report, &ep.robot, &ep.command, &ctx, &cfg.reward, cur);
    ep.prev_action = clipped;
    ep.episode_return += terms.total;
    let termination = check_termination(&cfg.termination, &ep.sim.model, &ep.robot, ep.step, cfg.episode_steps);
    ep.apply_schedule(cfg);
    let obs = ep.observation(cfg).unwrap_or(Observation { values: [0.0; OBS_DIM] });
    Ok(EnvStep { obs, reward: terms.total, terms, termination, label, report: Some(report) })
}
