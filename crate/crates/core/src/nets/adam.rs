use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::{check_dim, NamedTensor, NetError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm bound applied before the update; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, max_grad_norm: Some(1.0) }
    }
}

/// Adam moments for a list of tensors.
///
/// Each tensor keeps its own step count, so a tensor that receives no
/// gradient in a call is left exactly as it was, moments included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub steps: Vec<u64>,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Norm of the supplied gradients before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    /// `false` when the gradients were non-finite and the update was skipped.
    pub applied: bool,
}

impl OptimizerState {
    /// State for tensors of the given lengths.
    pub fn new(config: AdamConfig, lengths: &[usize]) -> Self {
        Self {
            config,
            steps: vec![0; lengths.len()],
            first_moment: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Moments as checkpoint tensors named `prefix.m{k}`, `prefix.v{k}` and a
    /// step-count vector `prefix.steps`.
    pub fn export(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = vec![NamedTensor {
            name: format!("{prefix}.steps"),
            shape: vec![self.steps.len()],
            data: self.steps.iter().map(|&s| s as f32).collect(),
        }];
        for (k, (m, v)) in self.first_moment.iter().zip(&self.second_moment).enumerate() {
            out.push(NamedTensor {
                name: format!("{prefix}.m{k}"),
                shape: vec![m.len()],
                data: m.iter().map(|&x| x as f32).collect(),
            });
            out.push(NamedTensor {
                name: format!("{prefix}.v{k}"),
                shape: vec![v.len()],
                data: v.iter().map(|&x| x as f32).collect(),
            });
        }
        out
    }

    /// Restores moments saved by [`OptimizerState::export`]; the tensor
    /// lengths must match this state.
    pub fn import(&mut self, prefix: &str, ckpt: &super::Checkpoint) -> Result<(), NetError> {
        let steps = ckpt.require(&format!("{prefix}.steps"))?;
        check_dim("optimizer tensor count", self.steps.len(), steps.data.len())?;
        for k in 0..self.steps.len() {
            let m = ckpt.require(&format!("{prefix}.m{k}"))?;
            let v = ckpt.require(&format!("{prefix}.v{k}"))?;
            check_dim("optimizer moment length", self.first_moment[k].len(), m.data.len())?;
            check_dim("optimizer moment length", self.second_moment[k].len(), v.data.len())?;
            self.steps[k] = steps.data[k] as u64;
            self.first_moment[k] = m.data.iter().map(|&x| x as f64).collect();
            self.second_moment[k] = v.data.iter().map(|&x| x as f64).collect();
        }
        Ok(())
    }
}

/// Euclidean norm over every present gradient tensor.
pub fn global_norm<T: Scalar>(grads: &[Option<&[T]>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// One Adam update with bias correction.
///
/// `grads[k]` pairs with `params[k]`; `None` marks a tensor that takes no part
/// in this step. When the configured bound is exceeded, all present gradients
/// are scaled by a common factor so their joint norm equals the bound.
pub fn optimizer_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Option<&[T]>],
    opt: &mut OptimizerState,
) -> Result<StepOutcome, NetError> {
    check_dim("optimizer tensor count", opt.steps.len(), params.len())?;
    check_dim("gradient tensor count", params.len(), grads.len())?;
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        check_dim("optimizer moment length", opt.first_moment[k].len(), p.len())?;
        if let Some(g) = g {
            check_dim("gradient length", p.len(), g.len())?;
        }
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Ok(StepOutcome { grad_norm: norm, clipped: false, applied: false });
    }
    let (scale, clipped) = match opt.config.max_grad_norm {
        Some(bound) if norm > bound => (bound / norm, true),
        _ => (1.0, false),
    };
    let cfg = opt.config.clone();
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        opt.steps[k] += 1;
        let t = opt.steps[k] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = &mut opt.first_moment[k];
        let v = &mut opt.second_moment[k];
        for i in 0..p.len() {
            let gi = g[i].as_f64() * scale;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let update = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            p[i] -= T::of(update);
        }
    }
    Ok(StepOutcome { grad_norm: norm, clipped, applied: true })
}
