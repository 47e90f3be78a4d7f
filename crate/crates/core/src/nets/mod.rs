//! Small batched neural-network toolkit with hand-written gradients.
//!
//! Every trainable type implements [`Params`], which lists its tensors in a
//! fixed order. Gradient buffers are zeroed clones of the network, so a
//! network and its gradient enumerate matching slices; the optimizer and the
//! checkpoint writer both rely on that.

mod adam;
mod checkpoint;
mod dense;
mod gaussian;
pub mod gradcheck;
mod gru;
mod scalar;

pub use adam::{global_norm, optimizer_step, AdamConfig, OptimizerState, StepOutcome};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Activation, DenseCache, DenseStack, Layer};
pub use gaussian::{GaussianHead, LOG_STD_MAX, LOG_STD_MIN};
pub use gru::{GruCache, GruCell, GruStepCache};
pub use scalar::{gemm, Mat, Scalar, View, ViewMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: String, expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing checkpoint entry {0}")]
    MissingEntry(String),
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), NetError> {
    if expected == got {
        Ok(())
    } else {
        Err(NetError::ShapeMismatch { what: what.to_string(), expected, got })
    }
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// A set of parameter tensors in a stable enumeration order.
pub trait Params<T: Scalar> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of all parameters, in enumeration order.
    fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Inverse of [`Params::flatten`].
    fn unflatten(&mut self, flat: &[T]) -> Result<(), NetError> {
        check_dim("flat parameter vector", self.param_count(), flat.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Export with every tensor name prefixed by `prefix.`.
    fn export(&self, prefix: &str) -> Vec<NamedTensor> {
        self.tensors()
            .into_iter()
            .map(|t| NamedTensor {
                name: format!("{prefix}.{}", t.name),
                shape: t.shape,
                data: t.data.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect()
    }

    /// Load every tensor named `prefix.<name>` from `ckpt`, checking shapes.
    fn import(&mut self, prefix: &str, ckpt: &Checkpoint) -> Result<(), NetError> {
        let expected: Vec<(String, Vec<usize>)> =
            self.tensors().into_iter().map(|t| (format!("{prefix}.{}", t.name), t.shape)).collect();
        let mut sources = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let entry = ckpt.get(name).ok_or_else(|| NetError::MissingEntry(name.clone()))?;
            if &entry.shape != shape {
                return Err(NetError::Checkpoint(format!(
                    "entry {name} has shape {:?}, expected {:?}",
                    entry.shape, shape
                )));
            }
            sources.push(entry);
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(sources) {
            for (d, s) in dst.iter_mut().zip(&src.data) {
                *d = T::of(*s as f64);
            }
        }
        Ok(())
    }
}

/// Adds `other` into `acc`, tensor by tensor. Both must enumerate identically.
pub fn accumulate<T: Scalar, P: Params<T>>(acc: &mut P, other: &P) {
    let src: Vec<Vec<T>> = other.tensors().iter().map(|t| t.data.to_vec()).collect();
    for (dst, s) in acc.tensors_mut().into_iter().zip(src) {
        for (d, v) in dst.iter_mut().zip(s) {
            *d += v;
        }
    }
}

/// Casts between precisions by round-tripping through the flat vector.
pub fn cast_params<A: Scalar, B: Scalar, P: Params<A>, Q: Params<B>>(src: &P, dst: &mut Q) -> Result<(), NetError> {
    let flat: Vec<B> = src.flatten().into_iter().map(|v| B::of(v.as_f64())).collect();
    dst.unflatten(&flat)
}
