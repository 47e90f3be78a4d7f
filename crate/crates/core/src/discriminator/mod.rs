//! Fault discriminator: a GRU encodes the recent joint states and a small
//! classifier turns the encoding into probabilities over Health, Limit and
//! Weak.

mod infer;
mod train;

pub use infer::{switch_latencies, StatusTracker, TrackerOutput};
pub use train::{evaluate, train_discriminator, DiscTrainConfig, EvalReport, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::nets::{Checkpoint, DenseStack, GruCell, Mat, NetError, Params, Scalar, TensorRef};
use crate::policy::{PolicyError, TASK_COUNT};
use crate::sim::JOINTS;

/// Per-tick input: joint offsets from the default pose, then scaled rates.
pub const FEATURE_DIM: usize = 2 * JOINTS;

#[derive(Debug, Error)]
pub enum DiscError {
    #[error("class {0} has no training samples")]
    ClassBalance(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint does not describe a discriminator: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscArch {
    pub hidden: usize,
    pub classifier_hidden: Vec<usize>,
    pub joint_velocity_scale: f64,
    pub default_pose: [f64; JOINTS],
}

impl Default for DiscArch {
    fn default() -> Self {
        Self {
            hidden: 64,
            classifier_hidden: vec![64],
            joint_velocity_scale: 0.05,
            default_pose: crate::sim::RobotModel::default().default_pose,
        }
    }
}

impl DiscArch {
    fn classifier_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.hidden];
        s.extend_from_slice(&self.classifier_hidden);
        s.push(TASK_COUNT);
        s
    }

    pub fn features(&self, q: &[f64; JOINTS], qd: &[f64; JOINTS]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|k| {
            if k < JOINTS {
                q[k] - self.default_pose[k]
            } else {
                qd[k - JOINTS] * self.joint_velocity_scale
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub arch: DiscArch,
    pub gru: GruCell<T>,
    pub classifier: DenseStack<T>,
}

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn new<R: Rng + ?Sized>(arch: DiscArch, rng: &mut R) -> Self {
        let gru = GruCell::orthogonal(FEATURE_DIM, arch.hidden, rng);
        let classifier = DenseStack::orthogonal(&arch.classifier_sizes(), std::f64::consts::SQRT_2, 0.01, rng);
        Self { arch, gru, classifier }
    }

    pub fn zeros(arch: DiscArch) -> Self {
        Self {
            gru: GruCell::zeros(FEATURE_DIM, arch.hidden),
            classifier: DenseStack::zeros(&arch.classifier_sizes()),
            arch,
        }
    }

    pub fn initial_hidden(&self) -> Vec<T> {
        vec![T::zero(); self.arch.hidden]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(json!({ "discriminator": self.arch }));
        ckpt.extend(self.gru.export("disc.gru"));
        ckpt.extend(self.classifier.export("disc.cls"));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, DiscError> {
        let arch = ckpt
            .metadata
            .get("discriminator")
            .ok_or_else(|| DiscError::Checkpoint("missing `discriminator` metadata".into()))?;
        let arch: DiscArch = serde_json::from_value(arch.clone()).map_err(|e| DiscError::Checkpoint(e.to_string()))?;
        let mut p = Self::zeros(arch);
        p.gru.import("disc.gru", ckpt)?;
        p.classifier.import("disc.cls", ckpt)?;
        Ok(p)
    }
}

impl<T: Scalar> Params<T> for DiscriminatorParams<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        for (prefix, ts) in [("gru", self.gru.tensors()), ("cls", self.classifier.tensors())] {
            out.extend(ts.into_iter().map(|mut t| {
                t.name = format!("{prefix}.{}", t.name);
                t
            }));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.gru.tensors_mut();
        out.extend(self.classifier.tensors_mut());
        out
    }
}

/// One recurrent step. The encoding `y` is the new hidden state.
pub fn encode_step<T: Scalar>(
    params: &DiscriminatorParams<T>,
    features: &[f64; FEATURE_DIM],
    hidden: &[T],
) -> Result<Vec<T>, DiscError> {
    let x = Mat::from_vec(1, FEATURE_DIM, features.iter().map(|&v| T::of(v)).collect());
    if hidden.len() != params.arch.hidden {
        return Err(NetError::ShapeMismatch {
            what: "hidden state".into(),
            expected: params.arch.hidden,
            got: hidden.len(),
        }
        .into());
    }
    let h = Mat::from_vec(1, hidden.len(), hidden.to_vec());
    Ok(params.gru.step_only(&x, &h)?.data)
}

/// Status probabilities for an encoding.
pub fn classify<T: Scalar>(params: &DiscriminatorParams<T>, y: &[T]) -> Result<[f64; TASK_COUNT], DiscError> {
    let logits = params.classifier.forward_vec(y)?;
    Ok(softmax(&std::array::from_fn(|k| logits[k].as_f64())))
}

pub fn softmax(logits: &[f64; TASK_COUNT]) -> [f64; TASK_COUNT] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - max).exp());
    let sum: f64 = e.iter().sum();
    e.map(|v| v / sum)
}
