use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, DiscArch, DiscError, DiscriminatorParams, FEATURE_DIM};
use crate::nets::{optimizer_step, AdamConfig, Mat, OptimizerState, Params, Scalar};
use crate::policy::TASK_COUNT;
use crate::ppo::DatasetEpisode;
use crate::sim::LegStatus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscTrainConfig {
    pub arch: DiscArch,
    /// Truncated-BPTT window, ticks.
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_episodes: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Ticks after a status change before accuracy is counted.
    pub settle_ticks: usize,
    /// Abort when some status never occurs in the training split.
    pub require_all_classes: bool,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        Self {
            arch: DiscArch::default(),
            window: 25,
            epochs: 15,
            learning_rate: 1e-3,
            batch_episodes: 32,
            holdout_fraction: 0.2,
            seed: 0,
            settle_ticks: 10,
            require_all_classes: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy over ticks at least `settle_ticks` after the last change.
    pub settled_accuracy: f64,
    pub settled_ticks: usize,
    /// Settled accuracy per true status; `None` when the status is absent.
    pub per_class: [Option<f64>; TASK_COUNT],
    /// Mean cross-entropy over all ticks.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub heldout_loss: Vec<f64>,
    pub heldout: EvalReport,
    /// Dataset indices of the held-out episodes.
    pub heldout_episodes: Vec<usize>,
}

struct Encoded {
    features: Vec<[f64; FEATURE_DIM]>,
    labels: Vec<usize>,
}

fn encode(arch: &DiscArch, ep: &DatasetEpisode) -> Encoded {
    Encoded {
        features: ep.positions.iter().zip(&ep.velocities).map(|(q, qd)| arch.features(q, qd)).collect(),
        labels: ep.labels.iter().map(|s| s.index()).collect(),
    }
}

/// Whole-batch cross-entropy of one window, gradients accumulated into
/// `grads`. Rows whose episode has ended carry zero weight. Returns the summed
/// loss and the hidden state after the window.
fn window_loss<T: Scalar>(
    params: &DiscriminatorParams<T>,
    inputs: &[Mat<T>],
    labels: &[Vec<Option<usize>>],
    h0: &Mat<T>,
    normalizer: f64,
    grads: Option<&mut DiscriminatorParams<T>>,
) -> Result<(f64, Mat<T>), DiscError> {
    let (hidden, cache) = params.gru.forward_sequence(inputs, h0)?;
    let batch = h0.rows;
    let h = params.arch.hidden;
    let steps = inputs.len();
    let mut stacked = Mat::zeros(steps * batch, h);
    for (t, m) in hidden.iter().enumerate() {
        stacked.data[t * batch * h..(t + 1) * batch * h].copy_from_slice(&m.data);
    }
    let cls_cache = params.classifier.forward(&stacked)?;
    let logits = cls_cache.output();
    let mut d_logits = Mat::zeros(steps * batch, TASK_COUNT);
    let mut loss = 0.0;
    for t in 0..steps {
        for b in 0..batch {
            let Some(y) = labels[t][b] else { continue };
            let r = t * batch + b;
            let l: [f64; TASK_COUNT] = std::array::from_fn(|k| logits.row(r)[k].as_f64());
            let p = softmax(&l);
            loss -= p[y].max(1e-300).ln();
            for k in 0..TASK_COUNT {
                let target = if k == y { 1.0 } else { 0.0 };
                d_logits.row_mut(r)[k] = T::of((p[k] - target) / normalizer);
            }
        }
    }
    let last = hidden.last().cloned().unwrap_or_else(|| h0.clone());
    if let Some(g) = grads {
        let d_stacked = params.classifier.backward(&cls_cache, &d_logits, &mut g.classifier)?;
        let d_hidden: Vec<Mat<T>> = (0..steps)
            .map(|t| Mat::from_vec(batch, h, d_stacked.data[t * batch * h..(t + 1) * batch * h].to_vec()))
            .collect();
        params.gru.backward_sequence(&cache, &d_hidden, &mut g.gru)?;
    }
    Ok((loss, last))
}

/// Inputs and labels of ticks `[start, start + len)` for a batch of episodes.
fn slice<T: Scalar>(eps: &[&Encoded], start: usize, len: usize) -> (Vec<Mat<T>>, Vec<Vec<Option<usize>>>, usize) {
    let mut inputs = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    let mut valid = 0;
    for t in start..start + len {
        let mut x = Mat::zeros(eps.len(), FEATURE_DIM);
        let mut l = Vec::with_capacity(eps.len());
        for (b, e) in eps.iter().enumerate() {
            if t < e.labels.len() {
                for (d, &v) in x.row_mut(b).iter_mut().zip(&e.features[t]) {
                    *d = T::of(v);
                }
                l.push(Some(e.labels[t]));
                valid += 1;
            } else {
                l.push(None);
            }
        }
        inputs.push(x);
        labels.push(l);
    }
    (inputs, labels, valid)
}

/// Per-tick probabilities for each episode, running the encoder from a zero
/// state at the episode start.
fn probabilities<T: Scalar>(
    params: &DiscriminatorParams<T>,
    eps: &[&Encoded],
) -> Result<Vec<Vec<[f64; TASK_COUNT]>>, DiscError> {
    let mut out: Vec<Vec<[f64; TASK_COUNT]>> = eps.iter().map(|e| Vec::with_capacity(e.labels.len())).collect();
    let longest = eps.iter().map(|e| e.labels.len()).max().unwrap_or(0);
    let mut h = Mat::zeros(eps.len(), params.arch.hidden);
    for t in 0..longest {
        let (inputs, _, _) = slice::<T>(eps, t, 1);
        h = params.gru.step_only(&inputs[0], &h)?;
        let logits = params.classifier.forward_only(&h)?;
        for (b, e) in eps.iter().enumerate() {
            if t < e.labels.len() {
                out[b].push(softmax(&std::array::from_fn(|k| logits.row(b)[k].as_f64())));
            }
        }
    }
    Ok(out)
}

/// Accuracy of `params` on `episodes`; ticks within `settle_ticks` of a
/// status change (or of the episode start) are excluded from the accuracy.
pub fn evaluate<T: Scalar>(
    params: &DiscriminatorParams<T>,
    episodes: &[DatasetEpisode],
    settle_ticks: usize,
) -> Result<EvalReport, DiscError> {
    let encoded: Vec<Encoded> = episodes.iter().map(|e| encode(&params.arch, e)).collect();
    let refs: Vec<&Encoded> = encoded.iter().collect();
    let mut correct = [0usize; TASK_COUNT];
    let mut total = [0usize; TASK_COUNT];
    let mut loss = 0.0;
    let mut ticks = 0usize;
    for chunk in refs.chunks(256) {
        let probs = probabilities(params, chunk)?;
        for (e, p) in chunk.iter().zip(&probs) {
            let mut since_change = 0;
            for t in 0..e.labels.len() {
                if t > 0 && e.labels[t] != e.labels[t - 1] {
                    since_change = 0;
                }
                let y = e.labels[t];
                loss -= p[t][y].max(1e-300).ln();
                ticks += 1;
                if since_change >= settle_ticks {
                    total[y] += 1;
                    if argmax(&p[t]) == y {
                        correct[y] += 1;
                    }
                }
                since_change += 1;
            }
        }
    }
    let settled: usize = total.iter().sum();
    Ok(EvalReport {
        settled_accuracy: if settled > 0 { correct.iter().sum::<usize>() as f64 / settled as f64 } else { 0.0 },
        settled_ticks: settled,
        per_class: std::array::from_fn(|k| (total[k] > 0).then(|| correct[k] as f64 / total[k] as f64)),
        loss: if ticks > 0 { loss / ticks as f64 } else { 0.0 },
    })
}

fn argmax(p: &[f64; TASK_COUNT]) -> usize {
    (1..TASK_COUNT).fold(0, |best, k| if p[k] > p[best] { k } else { best })
}

/// Supervised training on logged episodes, split by episode into training
/// and held-out sets.
pub fn train_discriminator(
    dataset: &[DatasetEpisode],
    cfg: &DiscTrainConfig,
) -> Result<(DiscriminatorParams<f32>, TrainReport), DiscError> {
    if dataset.is_empty() {
        return Err(DiscError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((dataset.len() as f64 * cfg.holdout_fraction).round() as usize).min(dataset.len() - 1);
    let (held, train_idx) = order.split_at(n_hold);
    let mut heldout_episodes = held.to_vec();
    heldout_episodes.sort_unstable();
    let train_idx = train_idx.to_vec();

    if cfg.require_all_classes {
        for s in LegStatus::ALL {
            if !train_idx.iter().any(|&i| dataset[i].labels.contains(&s)) {
                return Err(DiscError::ClassBalance(s.name()));
            }
        }
    }

    let encoded: Vec<Encoded> = dataset.iter().map(|e| encode(&cfg.arch, e)).collect();
    let held_set: Vec<DatasetEpisode> = heldout_episodes.iter().map(|&i| dataset[i].clone()).collect();
    let mut params = DiscriminatorParams::<f32>::new(cfg.arch.clone(), &mut rng);
    let lengths: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    let mut opt =
        OptimizerState::new(AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() }, &lengths);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut heldout_loss = Vec::with_capacity(cfg.epochs);
    let mut batch_order = train_idx.clone();
    let window = cfg.window.max(1);

    for _ in 0..cfg.epochs {
        batch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_ticks = 0usize;
        for batch in batch_order.chunks(cfg.batch_episodes.max(1)) {
            let eps: Vec<&Encoded> = batch.iter().map(|&i| &encoded[i]).collect();
            let longest = eps.iter().map(|e| e.labels.len()).max().unwrap_or(0);
            let mut h = Mat::zeros(eps.len(), cfg.arch.hidden);
            let mut start = 0;
            while start < longest {
                let len = window.min(longest - start);
                let (inputs, labels, valid) = slice::<f32>(&eps, start, len);
                let mut grads = DiscriminatorParams::zeros(cfg.arch.clone());
                let (loss, last) = window_loss(&params, &inputs, &labels, &h, valid as f64, Some(&mut grads))?;
                let g: Vec<&[f32]> = grads.tensors().into_iter().map(|t| t.data).collect();
                let present: Vec<Option<&[f32]>> = g.into_iter().map(Some).collect();
                optimizer_step(&mut params.tensors_mut(), &present, &mut opt)?;
                epoch_loss += loss;
                epoch_ticks += valid;
                h = last;
                start += len;
            }
        }
        train_loss.push(epoch_loss / epoch_ticks.max(1) as f64);
        heldout_loss.push(if held_set.is_empty() { 0.0 } else { evaluate(&params, &held_set, cfg.settle_ticks)?.loss });
    }
    let heldout =
        if held_set.is_empty() { EvalReport::default() } else { evaluate(&params, &held_set, cfg.settle_ticks)? };
    Ok((params, TrainReport { train_loss, heldout_loss, heldout, heldout_episodes }))
}
