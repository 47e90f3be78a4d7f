use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, CONTROL_HZ};
use crate::sim::LegStatus;

/// One status change at `onset` seconds into the episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub onset: f64,
    pub status: LegStatus,
}

/// Piecewise-constant leg status over an episode, healthy before the first event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub events: Vec<FaultEvent>,
    /// s
    pub episode_length: f64,
}

/// First tick governed by an event at `onset` seconds: `⌈onset · 50⌉`,
/// tolerant to rounding so that e.g. 3.2 s maps to tick 160.
pub fn onset_step(onset: f64) -> usize {
    (onset * CONTROL_HZ - 1e-9).ceil().max(0.0) as usize
}

impl FaultSchedule {
    pub fn healthy(episode_length: f64) -> Self {
        Self { events: Vec::new(), episode_length }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let mut last = 0.0;
        for e in &self.events {
            if !(e.onset > last && e.onset < self.episode_length) {
                return Err(EnvError::Config(format!(
                    "fault onsets must increase strictly within (0, {}); got {}",
                    self.episode_length, e.onset
                )));
            }
            last = e.onset;
        }
        Ok(())
    }

    /// Status in force at `time` seconds.
    pub fn status_at(&self, time: f64) -> LegStatus {
        self.events.iter().take_while(|e| e.onset <= time).last().map_or(LegStatus::Health, |e| e.status)
    }

    /// Status in force during tick `step`.
    pub fn status_at_step(&self, step: usize) -> LegStatus {
        self.events.iter().take_while(|e| onset_step(e.onset) <= step).last().map_or(LegStatus::Health, |e| e.status)
    }

    /// `(start_step, status)` for every segment, starting with the healthy one.
    pub fn segments(&self) -> Vec<(usize, LegStatus)> {
        let mut out = vec![(0, LegStatus::Health)];
        out.extend(self.events.iter().map(|e| (onset_step(e.onset), e.status)));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Inclusive range of the number of status changes per episode.
    pub event_count: [usize; 2],
    /// Open interval for onset times, s.
    pub onset_window: [f64; 2],
    /// Candidates for the first change away from health.
    pub first_statuses: Vec<LegStatus>,
    /// Candidates for every later change.
    pub later_statuses: Vec<LegStatus>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            event_count: [1, 3],
            onset_window: [0.5, 7.0],
            first_statuses: vec![LegStatus::Limit, LegStatus::Weak],
            later_statuses: LegStatus::ALL.to_vec(),
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, episode_length: f64) -> Result<(), EnvError> {
        let [lo, hi] = self.onset_window;
        if !(lo > 0.0 && lo < hi && hi < episode_length) {
            return Err(EnvError::Config(format!("onset window [{lo}, {hi}] must lie inside (0, {episode_length})")));
        }
        let [nmin, nmax] = self.event_count;
        if nmin > nmax {
            return Err(EnvError::Config("event_count range is inverted".into()));
        }
        // distinct ticks must be available for every onset
        let ticks = onset_step(hi).saturating_sub(onset_step(lo));
        if nmax > ticks {
            return Err(EnvError::Config("too many events for the onset window".into()));
        }
        if nmax > 0 && self.first_statuses.is_empty() {
            return Err(EnvError::Config("first_statuses is empty".into()));
        }
        if nmax > 1 && self.later_statuses.is_empty() {
            return Err(EnvError::Config("later_statuses is empty".into()));
        }
        Ok(())
    }

    /// Single change to `status` at a random time inside the window.
    pub fn single(status: LegStatus) -> Self {
        Self { event_count: [1, 1], first_statuses: vec![status], ..Self::default() }
    }
}

/// Random schedule: `n` onsets drawn uniformly in the open window, sorted and
/// falling on distinct ticks, with statuses drawn from the configured sets.
pub fn sample_fault_schedule<R: Rng + ?Sized>(rng: &mut R, cfg: &ScheduleConfig, episode_length: f64) -> FaultSchedule {
    let [nmin, nmax] = cfg.event_count;
    let n = rng.random_range(nmin..=nmax);
    let [lo, hi] = cfg.onset_window;
    let onsets = loop {
        let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        t.sort_by(|a, b| a.total_cmp(b));
        let inside = t.iter().all(|&x| x > lo && x < hi);
        let distinct = t.windows(2).all(|w| onset_step(w[0]) < onset_step(w[1]));
        if inside && distinct {
            break t;
        }
    };
    let events = onsets
        .into_iter()
        .enumerate()
        .map(|(k, onset)| {
            let pool = if k == 0 { &cfg.first_statuses } else { &cfg.later_statuses };
            FaultEvent { onset, status: *pool.choose(rng).expect("validated non-empty") }
        })
        .collect();
    FaultSchedule { events, episode_length }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_fault_segments() {
        let s = FaultSchedule { events: vec![FaultEvent { onset: 3.2, status: LegStatus::Weak }], episode_length: 8.0 };
        assert_eq!(s.status_at(3.19), LegStatus::Health);
        assert_eq!(s.status_at(3.2), LegStatus::Weak);
        assert_eq!(s.status_at(8.0), LegStatus::Weak);
        assert_eq!(s.status_at_step(159), LegStatus::Health);
        assert_eq!(s.status_at_step(160), LegStatus::Weak);
        assert_eq!(onset_step(3.2), 160);
    }

    #[test]
    fn fault_then_recovery() {
        let s = FaultSchedule {
            events: vec![
                FaultEvent { onset: 2.0, status: LegStatus::Limit },
                FaultEvent { onset: 5.0, status: LegStatus::Health },
            ],
            episode_length: 8.0,
        };
        s.validate().unwrap();
        assert_eq!(s.status_at_step(99), LegStatus::Health);
        assert_eq!(s.status_at_step(100), LegStatus::Limit);
        assert_eq!(s.status_at_step(250), LegStatus::Health);
        assert_eq!(s.segments(), vec![(0, LegStatus::Health), (100, LegStatus::Limit), (250, LegStatus::Health)]);
    }

    #[test]
    fn ten_thousand_schedules_respect_window() {
        let cfg = ScheduleConfig::default();
        cfg.validate(8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let s = sample_fault_schedule(&mut rng, &cfg, 8.0);
            s.validate().unwrap();
            assert!((1..=3).contains(&s.events.len()));
            counts[s.events.len()] += 1;
            for w in s.events.windows(2) {
                assert!(w[0].onset < w[1].onset);
            }
            for e in &s.events {
                assert!(e.onset > 0.5 && e.onset < 7.0);
            }
            assert_ne!(s.events[0].status, LegStatus::Health);
        }
        assert!(counts[1..].iter().all(|&c| c > 3000));
    }

    #[test]
    fn rejects_unordered_schedule() {
        let s = FaultSchedule {
            events: vec![
                FaultEvent { onset: 4.0, status: LegStatus::Limit },
                FaultEvent { onset: 3.0, status: LegStatus::Weak },
            ],
            episode_length: 8.0,
        };
        assert!(s.validate().is_err());
    }
}
