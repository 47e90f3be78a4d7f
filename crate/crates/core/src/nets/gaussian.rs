use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::{check_dim, NetError, Params, TensorRef};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian with a state-independent log standard deviation.
///
/// The stored parameter is unconstrained; the effective log-std is its clamp
/// to `[LOG_STD_MIN, LOG_STD_MAX]`, and gradients do not flow through the
/// clamp once it is active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead<T> {
    pub log_std: Vec<T>,
}

impl<T: Scalar> GaussianHead<T> {
    pub fn new(dims: usize, initial_log_std: f64) -> Self {
        Self { log_std: vec![T::of(initial_log_std); dims] }
    }

    pub fn dims(&self) -> usize {
        self.log_std.len()
    }

    pub fn effective_log_std(&self) -> Vec<T> {
        self.log_std.iter().map(|&v| clamp(v)).collect()
    }

    /// `mean + σ·ε` with `ε ~ N(0, I)`, together with its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[T], rng: &mut R) -> Result<(Vec<T>, T), NetError> {
        check_dim("gaussian mean", self.dims(), mean.len())?;
        let action: Vec<T> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + clamp(ls).exp() * T::of(eps)
            })
            .collect();
        let lp = self.log_prob(mean, &action)?;
        Ok((action, lp))
    }

    pub fn log_prob(&self, mean: &[T], action: &[T]) -> Result<T, NetError> {
        check_dim("gaussian mean", self.dims(), mean.len())?;
        check_dim("gaussian action", self.dims(), action.len())?;
        let half = T::of(0.5);
        let c = T::of(HALF_LN_TWO_PI);
        Ok(mean
            .iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((&m, &a), &ls)| {
                let ls = clamp(ls);
                let u = (a - m) / ls.exp();
                -half * u * u - ls - c
            })
            .sum())
    }

    pub fn entropy(&self) -> T {
        let c = T::of(0.5 + HALF_LN_TWO_PI);
        self.log_std.iter().map(|&ls| clamp(ls) + c).sum()
    }

    /// Gradients of `log_prob` with respect to the mean and to the stored
    /// log-std parameters.
    pub fn log_prob_grad(&self, mean: &[T], action: &[T]) -> (Vec<T>, Vec<T>) {
        let mut d_mean = Vec::with_capacity(mean.len());
        let mut d_log_std = Vec::with_capacity(mean.len());
        for ((&m, &a), &ls) in mean.iter().zip(action).zip(&self.log_std) {
            let s = clamp(ls).exp();
            let u = (a - m) / s;
            d_mean.push(u / s);
            d_log_std.push(if in_range(ls) { u * u - T::one() } else { T::zero() });
        }
        (d_mean, d_log_std)
    }

    /// Gradient of `entropy` with respect to the stored log-std parameters.
    pub fn entropy_grad(&self) -> Vec<T> {
        self.log_std.iter().map(|&ls| if in_range(ls) { T::one() } else { T::zero() }).collect()
    }
}

fn clamp<T: Scalar>(v: T) -> T {
    v.max(T::of(LOG_STD_MIN)).min(T::of(LOG_STD_MAX))
}

fn in_range<T: Scalar>(v: T) -> bool {
    v > T::of(LOG_STD_MIN) && v < T::of(LOG_STD_MAX)
}

impl<T: Scalar> Params<T> for GaussianHead<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        vec![TensorRef { name: "log_std".into(), shape: vec![self.log_std.len()], data: &self.log_std }]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.log_std]
    }
}
