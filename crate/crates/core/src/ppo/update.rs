use rand::seq::SliceRandom;
use rand::Rng;

use super::{PpoConfig, PpoError, RolloutBuffer};
use crate::env::OBS_DIM;
use crate::nets::{optimizer_step, Mat, OptimizerState, Params, Scalar};
use crate::policy::{routed_backward, routed_forward, HierarchicalParams, ParamGroup};
use crate::sim::JOINTS;

/// Averages over the minibatches applied in one [`ppo_update`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
    /// Minibatches dropped because the loss or gradient was not finite.
    pub skipped: usize,
}

/// Clipped surrogate `min(ρA, clip(ρ, 1 ± ε)A)` and its derivative in `ρ`.
pub fn surrogate_term(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

pub(crate) struct Minibatch<T> {
    pub x: Mat<T>,
    pub route: Vec<usize>,
    pub actions: Vec<T>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Loss of one minibatch; gradients accumulate into `grads`.
pub(crate) fn minibatch_loss<T: Scalar>(
    params: &HierarchicalParams<T>,
    mb: &Minibatch<T>,
    cfg: &PpoConfig,
    grads: &mut HierarchicalParams<T>,
) -> Result<LossParts, PpoError> {
    let b = mb.route.len();
    let inv_b = 1.0 / b as f64;
    let (means, actor_cache) = routed_forward(&params.front, &params.heads, &mb.x, &mb.route)?;
    let mut d_means = Mat::zeros(b, JOINTS);
    let mut parts = LossParts::default();
    let mut head_rows = vec![0usize; params.heads.len()];
    for r in 0..b {
        let h = mb.route[r];
        head_rows[h] += 1;
        let noise = &params.noise[h];
        let mean = means.row(r);
        let action = &mb.actions[r * JOINTS..(r + 1) * JOINTS];
        let logp = noise.log_prob(mean, action)?.as_f64();
        let log_ratio = logp - mb.old_log_probs[r];
        let ratio = log_ratio.exp();
        let (s, ds) = surrogate_term(ratio, mb.advantages[r], cfg.clip);
        parts.policy -= s * inv_b;
        parts.approx_kl += (ratio - 1.0 - log_ratio) * inv_b;
        if (ratio - 1.0).abs() > cfg.clip {
            parts.clip_fraction += inv_b;
        }
        let d_logp = -ds * ratio * inv_b;
        if d_logp != 0.0 {
            let (g_mean, g_log_std) = noise.log_prob_grad(mean, action);
            for (d, g) in d_means.row_mut(r).iter_mut().zip(&g_mean) {
                *d = T::of(d_logp) * *g;
            }
            for (d, g) in grads.noise[h].log_std.iter_mut().zip(&g_log_std) {
                *d += T::of(d_logp) * *g;
            }
        }
    }
    for (h, &rows) in head_rows.iter().enumerate() {
        if rows == 0 {
            continue;
        }
        let w = rows as f64 * inv_b;
        parts.entropy += w * params.noise[h].entropy().as_f64();
        for (d, g) in grads.noise[h].log_std.iter_mut().zip(params.noise[h].entropy_grad()) {
            *d -= T::of(cfg.entropy_coef * w) * g;
        }
    }
    routed_backward(&params.front, &params.heads, &actor_cache, &d_means, &mut grads.front, &mut grads.heads)?;

    let (values, critic_cache) = routed_forward(&params.critic_front, &params.critic_heads, &mb.x, &mb.route)?;
    let mut d_values = Mat::zeros(b, 1);
    for r in 0..b {
        let err = values.data[r].as_f64() - mb.returns[r];
        parts.value += err * err * inv_b;
        d_values.data[r] = T::of(2.0 * cfg.value_coef * err * inv_b);
    }
    routed_backward(
        &params.critic_front,
        &params.critic_heads,
        &critic_cache,
        &d_values,
        &mut grads.critic_front,
        &mut grads.critic_heads,
    )?;
    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;
    Ok(parts)
}

/// Several epochs of clipped-surrogate minibatch updates over `buffer`.
///
/// Advantages are normalized within each task's segment. A task head and its
/// value head take part in an optimizer step only when the minibatch holds
/// samples of that task, so heads of absent tasks stay bitwise unchanged.
pub fn ppo_update<T: Scalar, R: Rng + ?Sized>(
    params: &mut HierarchicalParams<T>,
    opt: &mut OptimizerState,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    if buffer.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    buffer.validate()?;
    let normalized: Vec<Vec<f64>> = buffer.segments.iter().map(|s| normalize(&s.advantages)).collect();
    let mut index: Vec<(usize, usize)> =
        buffer.segments.iter().enumerate().flat_map(|(s, seg)| (0..seg.len()).map(move |k| (s, k))).collect();
    let groups = params.param_groups();
    let chunk = index.len().div_ceil(cfg.minibatches);
    let mut stats = UpdateStats::default();

    for _ in 0..cfg.epochs {
        index.shuffle(rng);
        for rows in index.chunks(chunk) {
            let mut x = Mat::zeros(rows.len(), OBS_DIM);
            let mut mb = Minibatch {
                x: Mat::zeros(0, 0),
                route: Vec::with_capacity(rows.len()),
                actions: Vec::with_capacity(rows.len() * JOINTS),
                old_log_probs: Vec::with_capacity(rows.len()),
                advantages: Vec::with_capacity(rows.len()),
                returns: Vec::with_capacity(rows.len()),
            };
            for (r, &(s, k)) in rows.iter().enumerate() {
                let seg = &buffer.segments[s];
                for (d, &v) in x.row_mut(r).iter_mut().zip(seg.obs_row(k)) {
                    *d = T::of(v);
                }
                mb.route.push(params.head_index(seg.tasks[k]));
                mb.actions.extend(seg.action_row(k).iter().map(|&a| T::of(a)));
                mb.old_log_probs.push(seg.log_probs[k]);
                mb.advantages.push(normalized[s][k]);
                mb.returns.push(seg.returns[k]);
            }
            mb.x = x;

            let mut grads = params.zeros_like();
            let parts = minibatch_loss(params, &mb, cfg, &mut grads)?;
            if !parts.total.is_finite() {
                stats.skipped += 1;
                continue;
            }
            let mut used = vec![false; params.heads.len()];
            for &h in &mb.route {
                used[h] = true;
            }
            let grad_tensors: Vec<&[T]> = grads.tensors().into_iter().map(|t| t.data).collect();
            let present: Vec<Option<&[T]>> = grad_tensors
                .iter()
                .zip(&groups)
                .map(|(g, group)| match group {
                    ParamGroup::Head(h) | ParamGroup::CriticHead(h) if !used[*h] => None,
                    _ => Some(*g),
                })
                .collect();
            let outcome = optimizer_step(&mut params.tensors_mut(), &present, opt)?;
            if !outcome.applied {
                stats.skipped += 1;
                continue;
            }
            stats.minibatches += 1;
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.approx_kl += parts.approx_kl;
            stats.clip_fraction += parts.clip_fraction;
            stats.grad_norm += outcome.grad_norm;
        }
    }
    if stats.minibatches > 0 {
        let n = stats.minibatches as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.approx_kl /= n;
        stats.clip_fraction /= n;
        stats.grad_norm /= n;
    }
    Ok(stats)
}

fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    x.iter().map(|v| (v - mean) / std).collect()
}
