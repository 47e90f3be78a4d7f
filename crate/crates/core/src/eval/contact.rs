use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean_std, run_episodes, CommandDist, Controller, EnvConfig, EpisodeSpec, EvalError, Protocol};
use crate::policy::{HeadSelector, SelectionMode};
use crate::sim::{LegStatus, LEGS, PD_UPDATES_PER_TICK};

/// Contact flags are available at 200 Hz; coarser telemetry keeps every
/// `k`-th sample.
const RATES: [(usize, usize); 3] = [(50, 4), (100, 2), (200, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedRegime {
    pub name: String,
    pub command: CommandDist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactConfig {
    pub regimes: Vec<SpeedRegime>,
    pub envs: usize,
    pub seed: u64,
    pub switching: SelectionMode,
    pub hysteresis: usize,
    pub batch: usize,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            regimes: vec![
                SpeedRegime { name: "middle".into(), command: CommandDist::MIDDLE },
                SpeedRegime { name: "high".into(), command: CommandDist::HIGH },
            ],
            envs: 100,
            seed: 0,
            switching: SelectionMode::Discriminator,
            hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
            batch: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRow {
    pub policy: String,
    pub regime: String,
    pub episodes: usize,
    pub survived: usize,
    /// Horizon the contact time refers to, s.
    pub horizon: f64,
    /// Mean locked-foot contact time from 200 Hz samples, s.
    pub contact_time: f64,
    pub contact_time_std: f64,
    /// The same quantity from 50 Hz and 100 Hz subsamples.
    pub contact_time_50hz: f64,
    pub contact_time_100hz: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub rows: Vec<ContactRow>,
}

impl ContactReport {
    pub fn contact_time(&self, policy: &str, regime: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.policy == policy && r.regime == regime).map(|r| r.contact_time)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = Vec::new();
        writeln!(s, "locked-leg contact time").ok();
        for r in &self.rows {
            writeln!(
                s,
                "  {:<14} {:<7} {:.3} ± {:.3} s of {:.0} s  (50 Hz {:.3}, 100 Hz {:.3})  survived {}/{}",
                r.policy,
                r.regime,
                r.contact_time,
                r.contact_time_std,
                r.horizon,
                r.contact_time_50hz,
                r.contact_time_100hz,
                r.survived,
                r.episodes
            )
            .ok();
        }
        String::from_utf8(s).expect("ascii")
    }
}

/// Locked-foot contact counts at each telemetry rate, plus total samples.
#[derive(Clone, Copy, Debug, Default)]
struct Counts {
    contacts: [usize; 3],
    samples: [usize; 3],
}

impl Counts {
    fn add(&mut self, samples: &[[bool; LEGS]; PD_UPDATES_PER_TICK], leg: usize) {
        for (ri, &(_, stride)) in RATES.iter().enumerate() {
            // Align coarse samples with the end of the tick.
            for s in (stride - 1..PD_UPDATES_PER_TICK).step_by(stride) {
                self.samples[ri] += 1;
                self.contacts[ri] += samples[s][leg] as usize;
            }
        }
    }

    /// Contact time scaled to the full horizon from the fraction of sampled
    /// instants in contact, so episodes that end early are not rewarded for
    /// the time they spent not existing.
    fn time(&self, rate: usize, horizon: f64) -> f64 {
        if self.samples[rate] == 0 {
            0.0
        } else {
            horizon * self.contacts[rate] as f64 / self.samples[rate] as f64
        }
    }
}

/// Runs each policy with the leg locked from the first tick and integrates
/// the locked foot's floor-contact time over the episode horizon.
pub fn run_contact_time(
    env: &EnvConfig,
    policies: &[(String, Controller)],
    cfg: &ContactConfig,
) -> Result<ContactReport, EvalError> {
    if cfg.envs == 0 || cfg.batch == 0 {
        return Err(EvalError::Config("contact experiment needs envs ≥ 1 and batch ≥ 1".into()));
    }
    let leg = env.fault_leg.index();
    let horizon = env.episode_length();
    let mut report = ContactReport::default();
    for (name, controller) in policies {
        let controller = Controller { switching: cfg.switching, hysteresis: cfg.hysteresis, ..*controller };
        for (ri, regime) in cfg.regimes.iter().enumerate() {
            regime.command.validate(env)?;
            let specs: Vec<EpisodeSpec> = (0..cfg.envs)
                .map(|k| EpisodeSpec {
                    seed: cfg.seed,
                    stream: ((ri as u64) << 32) | k as u64,
                    protocol: Protocol::FromStart(LegStatus::Limit),
                    command: regime.command,
                })
                .collect();
            let mut counts = vec![Counts::default(); cfg.envs];
            let outcomes = run_episodes(env, &controller, &specs, cfg.batch, |v| {
                let Some(r) = &v.step.report else { return };
                counts[v.episode].add(&r.contact_samples, leg);
            })?;
            let times = |rate: usize| counts.iter().map(|c| c.time(rate, horizon)).collect::<Vec<f64>>();
            let (mean, std) = mean_std(&times(2));
            report.rows.push(ContactRow {
                policy: name.clone(),
                regime: regime.name.clone(),
                episodes: outcomes.len(),
                survived: outcomes.iter().filter(|o| o.survived()).count(),
                horizon,
                contact_time: mean,
                contact_time_std: std,
                contact_time_50hz: mean_std(&times(0)).0,
                contact_time_100hz: mean_std(&times(1)).0,
            });
        }
    }
    Ok(report)
}
