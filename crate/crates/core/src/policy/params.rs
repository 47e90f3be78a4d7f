use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{routed_forward, PolicyError, TaskId, TASK_COUNT};
use crate::env::{Observation, OBS_DIM};
use crate::nets::{Checkpoint, DenseStack, GaussianHead, Mat, NamedTensor, NetError, Params, Scalar, TensorRef};
use crate::sim::JOINTS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One head per task.
    Hierarchical,
    /// A single head shared by every task.
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyArch {
    pub front_hidden: Vec<usize>,
    pub latent: usize,
    pub head_hidden: Vec<usize>,
    pub critic_front_hidden: Vec<usize>,
    pub critic_latent: usize,
    pub critic_head_hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Gain of the last policy layer at initialization.
    pub action_gain: f64,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self {
            front_hidden: vec![256, 128],
            latent: 64,
            head_hidden: vec![64],
            critic_front_hidden: vec![256, 128],
            critic_latent: 64,
            critic_head_hidden: vec![64],
            init_log_std: 0.5f64.ln(),
            action_gain: 0.01,
        }
    }
}

impl PolicyArch {
    fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(hidden);
        s.push(output);
        s
    }

    pub fn front_sizes(&self) -> Vec<usize> {
        Self::sizes(OBS_DIM, &self.front_hidden, self.latent)
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        Self::sizes(self.latent, &self.head_hidden, JOINTS)
    }

    pub fn critic_front_sizes(&self) -> Vec<usize> {
        Self::sizes(OBS_DIM, &self.critic_front_hidden, self.critic_latent)
    }

    pub fn critic_head_sizes(&self) -> Vec<usize> {
        Self::sizes(self.critic_latent, &self.critic_head_hidden, 1)
    }
}

/// Which optimizer group a parameter tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Front,
    Head(usize),
    CriticFront,
    CriticHead(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    /// Raw policy output, before clipping and scaling by the environment.
    pub action: [f64; JOINTS],
    pub log_prob: f64,
    pub value: f64,
}

/// Actor and critic parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalParams<T> {
    pub layout: Layout,
    pub arch: PolicyArch,
    pub front: DenseStack<T>,
    pub heads: Vec<DenseStack<T>>,
    pub noise: Vec<GaussianHead<T>>,
    pub critic_front: DenseStack<T>,
    pub critic_heads: Vec<DenseStack<T>>,
}

impl<T: Scalar> HierarchicalParams<T> {
    pub fn head_count(layout: Layout) -> usize {
        match layout {
            Layout::Hierarchical => TASK_COUNT,
            Layout::Single => 1,
        }
    }

    pub fn new<R: Rng + ?Sized>(arch: PolicyArch, layout: Layout, rng: &mut R) -> Self {
        let n = Self::head_count(layout);
        let root2 = std::f64::consts::SQRT_2;
        let front = DenseStack::orthogonal(&arch.front_sizes(), root2, root2, rng);
        let heads = (0..n).map(|_| DenseStack::orthogonal(&arch.head_sizes(), root2, arch.action_gain, rng)).collect();
        let critic_front = DenseStack::orthogonal(&arch.critic_front_sizes(), root2, root2, rng);
        let critic_heads = (0..n).map(|_| DenseStack::orthogonal(&arch.critic_head_sizes(), root2, 1.0, rng)).collect();
        let noise = (0..n).map(|_| GaussianHead::new(JOINTS, arch.init_log_std)).collect();
        Self { layout, arch, front, heads, noise, critic_front, critic_heads }
    }

    /// All-zero parameters with this shape; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    /// Head serving `task` under this layout.
    pub fn head_index(&self, task: TaskId) -> usize {
        match self.layout {
            Layout::Hierarchical => task.index(),
            Layout::Single => 0,
        }
    }

    pub fn head_name(&self, head: usize) -> &'static str {
        match self.layout {
            Layout::Hierarchical => TaskId::ALL[head].name(),
            Layout::Single => "shared",
        }
    }

    fn obs_row(obs: &[f64]) -> Result<Mat<T>, PolicyError> {
        if obs.len() != OBS_DIM {
            return Err(NetError::ShapeMismatch {
                what: "observation length".into(),
                expected: OBS_DIM,
                got: obs.len(),
            }
            .into());
        }
        Ok(Mat::from_vec(1, OBS_DIM, obs.iter().map(|&v| T::of(v)).collect()))
    }

    /// Latent vector, action mean and effective log-std for one observation.
    pub fn actor_forward(&self, obs: &[f64], task: TaskId) -> Result<(Vec<T>, Vec<T>, Vec<T>), PolicyError> {
        let x = Self::obs_row(obs)?;
        let h = self.head_index(task);
        let z = self.front.forward_only(&x)?;
        let mean = self.heads[h].forward_only(&z)?;
        Ok((mean.data, self.noise[h].effective_log_std(), z.data))
    }

    pub fn critic_forward(&self, obs: &[f64], task: TaskId) -> Result<T, PolicyError> {
        let x = Self::obs_row(obs)?;
        let z = self.critic_front.forward_only(&x)?;
        Ok(self.critic_heads[self.head_index(task)].forward_only(&z)?.data[0])
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        task: TaskId,
        rng: &mut R,
        mode: ActMode,
    ) -> Result<ActOutput, PolicyError> {
        let (mean, _, _) = self.actor_forward(obs, task)?;
        let value = self.critic_forward(obs, task)?;
        let noise = &self.noise[self.head_index(task)];
        let (action, log_prob) = match mode {
            ActMode::Stochastic => noise.sample(&mean, rng)?,
            ActMode::Deterministic => {
                let lp = noise.log_prob(&mean, &mean)?;
                (mean, lp)
            }
        };
        Ok(ActOutput {
            action: std::array::from_fn(|j| action[j].as_f64()),
            log_prob: log_prob.as_f64(),
            value: value.as_f64(),
        })
    }

    /// Batched [`HierarchicalParams::act`]; draws noise row by row in batch order.
    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        obs: &[Observation],
        tasks: &[TaskId],
        rng: &mut R,
        mode: ActMode,
    ) -> Result<Vec<ActOutput>, PolicyError> {
        let x = observation_matrix(obs);
        let route: Vec<usize> = tasks.iter().map(|&t| self.head_index(t)).collect();
        let (means, _) = routed_forward(&self.front, &self.heads, &x, &route)?;
        let values = self.values_batch(&x, &route)?;
        let mut out = Vec::with_capacity(obs.len());
        for r in 0..obs.len() {
            let mean = means.row(r);
            let noise = &self.noise[route[r]];
            let (action, log_prob) = match mode {
                ActMode::Stochastic => noise.sample(mean, rng)?,
                ActMode::Deterministic => (mean.to_vec(), noise.log_prob(mean, mean)?),
            };
            out.push(ActOutput {
                action: std::array::from_fn(|j| action[j].as_f64()),
                log_prob: log_prob.as_f64(),
                value: values[r].as_f64(),
            });
        }
        Ok(out)
    }

    /// Critic values for observations evaluated under the given tasks.
    pub fn values_for(&self, obs: &[Observation], tasks: &[TaskId]) -> Result<Vec<f64>, PolicyError> {
        let route: Vec<usize> = tasks.iter().map(|&t| self.head_index(t)).collect();
        Ok(self.values_batch(&observation_matrix(obs), &route)?.into_iter().map(|v| v.as_f64()).collect())
    }

    /// Critic values for a batch routed by head index.
    pub fn values_batch(&self, x: &Mat<T>, route: &[usize]) -> Result<Vec<T>, PolicyError> {
        let (v, _) = routed_forward(&self.critic_front, &self.critic_heads, x, route)?;
        Ok(v.data)
    }

    /// Group of every tensor, in [`Params::tensors`] order.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut g = Vec::new();
        g.extend(std::iter::repeat_n(ParamGroup::Front, self.front.tensors().len()));
        for (h, head) in self.heads.iter().enumerate() {
            g.extend(std::iter::repeat_n(ParamGroup::Head(h), head.tensors().len() + 1));
        }
        g.extend(std::iter::repeat_n(ParamGroup::CriticFront, self.critic_front.tensors().len()));
        for (h, head) in self.critic_heads.iter().enumerate() {
            g.extend(std::iter::repeat_n(ParamGroup::CriticHead(h), head.tensors().len()));
        }
        g
    }

    fn describe(&self) -> Value {
        serde_json::json!({ "layout": self.layout, "arch": self.arch })
    }

    /// Checkpoint with the parameters and `metadata` plus a `policy` key
    /// describing the architecture.
    pub fn to_checkpoint(&self, mut metadata: Value) -> Checkpoint {
        if let Value::Object(map) = &mut metadata {
            map.insert("policy".into(), self.describe());
        } else {
            metadata = serde_json::json!({ "policy": self.describe() });
        }
        let mut ckpt = Checkpoint::new(metadata);
        ckpt.extend(self.export_all());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PolicyError> {
        let desc =
            ckpt.metadata.get("policy").ok_or_else(|| PolicyError::Checkpoint("missing `policy` metadata".into()))?;
        let layout: Layout =
            serde_json::from_value(desc["layout"].clone()).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let arch: PolicyArch =
            serde_json::from_value(desc["arch"].clone()).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let mut p = Self::zeros(arch, layout);
        p.import_all(ckpt)?;
        Ok(p)
    }

    /// Parameters with every tensor zero.
    pub fn zeros(arch: PolicyArch, layout: Layout) -> Self {
        let n = Self::head_count(layout);
        Self {
            layout,
            front: DenseStack::zeros(&arch.front_sizes()),
            heads: (0..n).map(|_| DenseStack::zeros(&arch.head_sizes())).collect(),
            noise: (0..n).map(|_| GaussianHead::new(JOINTS, 0.0)).collect(),
            critic_front: DenseStack::zeros(&arch.critic_front_sizes()),
            critic_heads: (0..n).map(|_| DenseStack::zeros(&arch.critic_head_sizes())).collect(),
            arch,
        }
    }

    fn export_all(&self) -> Vec<NamedTensor> {
        self.tensors()
            .into_iter()
            .map(|t| NamedTensor {
                name: t.name,
                shape: t.shape,
                data: t.data.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect()
    }

    fn import_all(&mut self, ckpt: &Checkpoint) -> Result<(), PolicyError> {
        let mut flat = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            let entry = ckpt.get(&t.name).ok_or_else(|| NetError::MissingEntry(t.name.clone()))?;
            if entry.shape != t.shape {
                return Err(PolicyError::Checkpoint(format!(
                    "entry {} has shape {:?}, expected {:?}",
                    t.name, entry.shape, t.shape
                )));
            }
            flat.extend(entry.data.iter().map(|&v| T::of(v as f64)));
        }
        self.unflatten(&flat)?;
        Ok(())
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> HierarchicalParams<U> {
        let mut out = HierarchicalParams::<U>::zeros(self.arch.clone(), self.layout);
        crate::nets::cast_params(self, &mut out).expect("identical layouts");
        out
    }
}

impl<T: Scalar> Params<T> for HierarchicalParams<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        fn prefixed<'a, T: Scalar>(p: &'a impl Params<T>, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
            for mut t in p.tensors() {
                t.name = format!("{prefix}.{}", t.name);
                out.push(t);
            }
        }
        let mut out = Vec::new();
        prefixed(&self.front, "front", &mut out);
        for h in 0..self.heads.len() {
            let name = format!("head.{}", self.head_name(h));
            prefixed(&self.heads[h], &name, &mut out);
            prefixed(&self.noise[h], &name, &mut out);
        }
        prefixed(&self.critic_front, "critic.front", &mut out);
        for h in 0..self.critic_heads.len() {
            prefixed(&self.critic_heads[h], &format!("critic.head.{}", self.head_name(h)), &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.front.tensors_mut();
        for (head, noise) in self.heads.iter_mut().zip(&mut self.noise) {
            out.extend(head.tensors_mut());
            out.extend(noise.tensors_mut());
        }
        out.extend(self.critic_front.tensors_mut());
        for head in &mut self.critic_heads {
            out.extend(head.tensors_mut());
        }
        out
    }
}

/// Stacks observations into a batch matrix.
pub fn observation_matrix<T: Scalar>(obs: &[Observation]) -> Mat<T> {
    Mat::from_vec(obs.len(), OBS_DIM, obs.iter().flat_map(|o| o.values.iter().map(|&v| T::of(v))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> PolicyArch {
        PolicyArch {
            front_hidden: vec![16, 12],
            latent: 6,
            head_hidden: vec![5],
            critic_front_hidden: vec![10],
            critic_latent: 4,
            critic_head_hidden: vec![3],
            ..PolicyArch::default()
        }
    }

    fn obs(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Plain nested-loop evaluation of a stack, independent of the gemm path.
    fn reference_stack(stack: &DenseStack<f64>, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in &stack.layers {
            let mut y = layer.bias.clone();
            for (i, &xi) in a.iter().enumerate() {
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo += xi * layer.weight[i * layer.outputs + o];
                }
            }
            if layer.activation == crate::nets::Activation::Tanh {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = y;
        }
        a
    }

    fn params(layout: Layout) -> HierarchicalParams<f64> {
        let mut p = HierarchicalParams::new(small_arch(), layout, &mut ChaCha8Rng::seed_from_u64(3));
        // Larger output weights so heads actually differ.
        for head in &mut p.heads {
            head.layers.last_mut().unwrap().weight.iter_mut().for_each(|w| *w *= 100.0);
        }
        p
    }

    #[test]
    fn latent_is_shared_across_tasks() {
        let p = params(Layout::Hierarchical);
        let x = obs(1);
        let (m0, _, z0) = p.actor_forward(&x, TaskId::HEALTH).unwrap();
        for task in [TaskId::LIMIT, TaskId::WEAK] {
            let (m, _, z) = p.actor_forward(&x, task).unwrap();
            assert_eq!(z, z0);
            assert_ne!(m, m0);
        }
    }

    #[test]
    fn zero_front_weights_give_bias_latent() {
        let mut p = params(Layout::Hierarchical);
        for layer in &mut p.front.layers {
            layer.weight.fill(0.0);
            layer.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
        }
        let (_, _, z) = p.actor_forward(&obs(2), TaskId::WEAK).unwrap();
        assert_eq!(z, p.front.layers.last().unwrap().bias);
    }

    #[test]
    fn forward_matches_staged_reference() {
        let p = params(Layout::Hierarchical);
        let x = obs(4);
        for task in TaskId::ALL {
            let z = reference_stack(&p.front, &x);
            let mean = reference_stack(&p.heads[task.index()], &z);
            let value = reference_stack(&p.critic_heads[task.index()], &reference_stack(&p.critic_front, &x))[0];
            let (m, _, _) = p.actor_forward(&x, task).unwrap();
            for (a, b) in m.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((p.critic_forward(&x, task).unwrap() - value).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_action_is_the_mean() {
        let p = params(Layout::Hierarchical);
        let x = obs(5);
        let out = p.act(&x, TaskId::LIMIT, &mut ChaCha8Rng::seed_from_u64(0), ActMode::Deterministic).unwrap();
        let (mean, log_std, _) = p.actor_forward(&x, TaskId::LIMIT).unwrap();
        assert_eq!(out.action.to_vec(), mean);
        let expected: f64 = log_std.iter().map(|ls| -ls - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum();
        assert!((out.log_prob - expected).abs() < 1e-12);
    }

    #[test]
    fn sampled_log_prob_reevaluates() {
        let p = params(Layout::Hierarchical);
        let x = obs(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for task in TaskId::ALL {
            let out = p.act(&x, task, &mut rng, ActMode::Stochastic).unwrap();
            let (mean, _, _) = p.actor_forward(&x, task).unwrap();
            let lp = p.noise[task.index()].log_prob(&mean, &out.action).unwrap();
            assert!((lp - out.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_spread_matches_initial_std() {
        let p = params(Layout::Hierarchical);
        let x = obs(7);
        let (mean, _, _) = p.actor_forward(&x, TaskId::HEALTH).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let out = p.act(&x, TaskId::HEALTH, &mut rng, ActMode::Stochastic).unwrap();
            sq += out.action.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>();
        }
        let std = (sq / (n * JOINTS) as f64).sqrt();
        assert!((std - 0.5).abs() < 0.01, "{std}");
    }

    #[test]
    fn batch_matches_single_rows() {
        let p = params(Layout::Hierarchical);
        let rows: Vec<Observation> = (0..7).map(|k| Observation { values: obs(10 + k).try_into().unwrap() }).collect();
        let tasks: Vec<TaskId> = (0..7).map(|k| TaskId::ALL[(k * 2) % 3]).collect();
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        let batch = p.act_batch(&rows, &tasks, &mut rng_a, ActMode::Stochastic).unwrap();
        for ((o, &t), b) in rows.iter().zip(&tasks).zip(&batch) {
            let single = p.act(&o.values, t, &mut rng_b, ActMode::Stochastic).unwrap();
            for (x, y) in single.action.iter().zip(&b.action) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((single.log_prob - b.log_prob).abs() < 1e-9);
            assert!((single.value - b.value).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layout_shares_one_head() {
        let p = params(Layout::Single);
        assert_eq!(p.heads.len(), 1);
        let x = obs(8);
        let a = p.actor_forward(&x, TaskId::HEALTH).unwrap();
        let b = p.actor_forward(&x, TaskId::WEAK).unwrap();
        assert_eq!(a, b);
        assert!(p.tensors().iter().any(|t| t.name == "head.shared.l0.w"));
    }

    #[test]
    fn groups_cover_every_tensor() {
        let p = params(Layout::Hierarchical);
        let groups = p.param_groups();
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(groups.len(), names.len());
        for (g, n) in groups.iter().zip(&names) {
            let ok = match g {
                ParamGroup::Front => n.starts_with("front."),
                ParamGroup::Head(h) => n.starts_with(&format!("head.{}.", TaskId::ALL[*h].name())),
                ParamGroup::CriticFront => n.starts_with("critic.front."),
                ParamGroup::CriticHead(h) => n.starts_with(&format!("critic.head.{}.", TaskId::ALL[*h].name())),
            };
            assert!(ok, "{g:?} {n}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = params(Layout::Hierarchical);
        let ckpt = p.to_checkpoint(serde_json::json!({ "iteration": 7 }));
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let back = HierarchicalParams::<f64>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.arch, p.arch);
        assert_eq!(back.layout, p.layout);
        let f32s: HierarchicalParams<f32> = p.cast();
        assert_eq!(back.cast::<f32>().flatten(), f32s.flatten());
        assert_eq!(ckpt.metadata["iteration"], 7);
    }

    #[test]
    fn checkpoint_without_policy_metadata_is_rejected() {
        let ckpt = Checkpoint::new(serde_json::json!({}));
        assert!(matches!(HierarchicalParams::<f64>::from_checkpoint(&ckpt), Err(PolicyError::Checkpoint(_))));
    }

    #[test]
    fn wrong_observation_length_is_rejected() {
        let p = params(Layout::Hierarchical);
        assert!(p.actor_forward(&[0.0; 5], TaskId::HEALTH).is_err());
    }
}
