use serde::{Deserialize, Serialize};

use super::{PolicyError, TaskId, TASK_COUNT};
use crate::sim::LegStatus;

/// Where the head selector gets the leg status from at run time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Status probabilities from the discriminator, filtered by hysteresis.
    #[default]
    Discriminator,
    /// The true status, applied immediately.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectorInput {
    Probabilities([f64; TASK_COUNT]),
    Oracle(LegStatus),
}

/// Tracks the active task head. A new argmax must persist for `hysteresis`
/// consecutive updates before the active head changes.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadSelector {
    hysteresis: usize,
    active: TaskId,
    candidate: TaskId,
    streak: usize,
}

impl HeadSelector {
    pub const DEFAULT_HYSTERESIS: usize = 5;

    pub fn new(hysteresis: usize) -> Self {
        Self { hysteresis: hysteresis.max(1), active: TaskId::HEALTH, candidate: TaskId::HEALTH, streak: 0 }
    }

    pub fn active(&self) -> TaskId {
        self.active
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.hysteresis);
    }

    pub fn update(&mut self, input: SelectorInput) -> Result<TaskId, PolicyError> {
        match input {
            SelectorInput::Oracle(status) => {
                self.active = status.into();
                self.candidate = self.active;
                self.streak = 0;
            }
            SelectorInput::Probabilities(u) => {
                let argmax = TaskId::new(argmax(&u)?)?;
                if argmax == self.active {
                    self.streak = 0;
                } else {
                    if argmax == self.candidate {
                        self.streak += 1;
                    } else {
                        self.candidate = argmax;
                        self.streak = 1;
                    }
                    if self.streak >= self.hysteresis {
                        self.active = argmax;
                        self.streak = 0;
                    }
                }
            }
        }
        Ok(self.active)
    }
}

impl Default for HeadSelector {
    fn default() -> Self {
        Self::new(Self::DEFAULT_HYSTERESIS)
    }
}

/// Index of the largest probability; ties go to the lowest index.
fn argmax(u: &[f64; TASK_COUNT]) -> Result<usize, PolicyError> {
    let sum: f64 = u.iter().sum();
    if u.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(PolicyError::MalformedProbabilities(u.to_vec()));
    }
    let mut best = 0;
    for k in 1..TASK_COUNT {
        if u[k] > u[best] {
            best = k;
        }
    }
    Ok(best)
}
