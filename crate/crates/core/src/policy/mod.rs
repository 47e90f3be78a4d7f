//! Joint task policy: a shared front network produces a latent vector that
//! one of several task heads turns into joint-target offsets; the critic has
//! the same shape with scalar value heads.

mod params;
mod routed;
mod selector;

pub use params::{observation_matrix, ActMode, ActOutput, HierarchicalParams, Layout, ParamGroup, PolicyArch};
pub use routed::{routed_backward, routed_forward, RoutedCache};
pub use selector::{HeadSelector, SelectionMode, SelectorInput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::NetError;
use crate::sim::LegStatus;

pub const TASK_COUNT: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid task index {0}")]
    InvalidTask(usize),
    #[error("malformed status probabilities {0:?}")]
    MalformedProbabilities(Vec<f64>),
    #[error("checkpoint does not describe a policy: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Index of a task head: 0 Health, 1 Limit, 2 Weak.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct TaskId(usize);

impl TaskId {
    pub const HEALTH: TaskId = TaskId(0);
    pub const LIMIT: TaskId = TaskId(1);
    pub const WEAK: TaskId = TaskId(2);
    pub const ALL: [TaskId; TASK_COUNT] = [Self::HEALTH, Self::LIMIT, Self::WEAK];

    pub fn new(index: usize) -> Result<Self, PolicyError> {
        if index < TASK_COUNT {
            Ok(TaskId(index))
        } else {
            Err(PolicyError::InvalidTask(index))
        }
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn status(self) -> LegStatus {
        LegStatus::from_index(self.0).expect("task index is always valid")
    }

    pub fn name(self) -> &'static str {
        self.status().name()
    }
}

impl From<LegStatus> for TaskId {
    fn from(s: LegStatus) -> Self {
        TaskId(s.index())
    }
}

impl TryFrom<usize> for TaskId {
    type Error = PolicyError;

    fn try_from(i: usize) -> Result<Self, Self::Error> {
        TaskId::new(i)
    }
}

impl From<TaskId> for usize {
    fn from(t: TaskId) -> usize {
        t.0
    }
}
