use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::orthogonal_matrix;
use super::scalar::{gemm, Mat, Scalar, View, ViewMut};
use super::{check_dim, NetError, Params, TensorRef};

/// Gated recurrent cell.
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// n  = tanh(x Wn + (r ⊙ h) Un + bn)
/// h' = z ⊙ n + (1 − z) ⊙ h
/// ```
///
/// `input_weight` packs `[Wz | Wr | Wn]` as `inputs × 3H`, `gate_weight` packs
/// `[Uz | Ur]` as `H × 2H`, `candidate_weight` is `Un` (`H × H`) and `bias`
/// packs `[bz | br | bn]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell<T> {
    pub inputs: usize,
    pub hidden: usize,
    pub input_weight: Vec<T>,
    pub gate_weight: Vec<T>,
    pub candidate_weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Values from one batched step needed by the backward pass.
#[derive(Clone, Debug)]
pub struct GruStepCache<T> {
    pub input: Mat<T>,
    pub prev: Mat<T>,
    pub update: Mat<T>,
    pub reset: Mat<T>,
    pub candidate: Mat<T>,
    pub reset_hidden: Mat<T>,
}

/// A window of step caches, oldest first.
#[derive(Clone, Debug, Default)]
pub struct GruCache<T> {
    pub steps: Vec<GruStepCache<T>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> GruCell<T> {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            inputs,
            hidden,
            input_weight: vec![T::zero(); inputs * 3 * hidden],
            gate_weight: vec![T::zero(); hidden * 2 * hidden],
            candidate_weight: vec![T::zero(); hidden * hidden],
            bias: vec![T::zero(); 3 * hidden],
        }
    }

    /// Orthogonal blocks per gate, zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(inputs, hidden);
        let h = hidden;
        for g in 0..3 {
            let w = orthogonal_matrix(inputs, h, rng);
            for i in 0..inputs {
                for j in 0..h {
                    cell.input_weight[i * 3 * h + g * h + j] = T::of(w[i * h + j]);
                }
            }
        }
        for g in 0..2 {
            let u = orthogonal_matrix(h, h, rng);
            for i in 0..h {
                for j in 0..h {
                    cell.gate_weight[i * 2 * h + g * h + j] = T::of(u[i * h + j]);
                }
            }
        }
        let un = orthogonal_matrix(h, h, rng);
        for (d, s) in cell.candidate_weight.iter_mut().zip(un) {
            *d = T::of(s);
        }
        cell
    }

    /// One batched step: rows of `input` and `hidden` are independent sequences.
    pub fn step(&self, input: &Mat<T>, hidden: &Mat<T>) -> Result<(Mat<T>, GruStepCache<T>), NetError> {
        check_dim("gru input width", self.inputs, input.cols)?;
        check_dim("gru hidden width", self.hidden, hidden.cols)?;
        check_dim("gru batch", input.rows, hidden.rows)?;
        let (b, h) = (input.rows, self.hidden);

        // pre-activations of all three gates from the input
        let mut pre = Mat::zeros(b, 3 * h);
        for r in 0..b {
            pre.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(T::one(), input.view(), View::row_major(&self.input_weight, self.inputs, 3 * h), T::one(), pre.view_mut());
        gemm(
            T::one(),
            hidden.view(),
            View::row_major(&self.gate_weight, h, 2 * h),
            T::one(),
            pre.view_mut().cols(0, 2 * h),
        );

        let mut update = Mat::zeros(b, h);
        let mut reset = Mat::zeros(b, h);
        let mut reset_hidden = Mat::zeros(b, h);
        for r in 0..b {
            let p = pre.row(r);
            let hp = hidden.row(r);
            for j in 0..h {
                let zv = sigmoid(p[j]);
                let rv = sigmoid(p[h + j]);
                update.data[r * h + j] = zv;
                reset.data[r * h + j] = rv;
                reset_hidden.data[r * h + j] = rv * hp[j];
            }
        }
        gemm(
            T::one(),
            reset_hidden.view(),
            View::row_major(&self.candidate_weight, h, h),
            T::one(),
            pre.view_mut().cols(2 * h, h),
        );
        let mut candidate = Mat::zeros(b, h);
        let mut next = Mat::zeros(b, h);
        for r in 0..b {
            for j in 0..h {
                let nv = pre.data[r * 3 * h + 2 * h + j].tanh();
                let zv = update.data[r * h + j];
                candidate.data[r * h + j] = nv;
                next.data[r * h + j] = zv * nv + (T::one() - zv) * hidden.data[r * h + j];
            }
        }
        let cache = GruStepCache { input: input.clone(), prev: hidden.clone(), update, reset, candidate, reset_hidden };
        Ok((next, cache))
    }

    /// Step without retaining a cache.
    pub fn step_only(&self, input: &Mat<T>, hidden: &Mat<T>) -> Result<Mat<T>, NetError> {
        Ok(self.step(input, hidden)?.0)
    }

    /// Unrolls a window. Returns the hidden state after every step.
    pub fn forward_sequence(&self, inputs: &[Mat<T>], h0: &Mat<T>) -> Result<(Vec<Mat<T>>, GruCache<T>), NetError> {
        let mut h = h0.clone();
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut cache = GruCache { steps: Vec::with_capacity(inputs.len()) };
        for x in inputs {
            let (next, c) = self.step(x, &h)?;
            cache.steps.push(c);
            outputs.push(next.clone());
            h = next;
        }
        Ok((outputs, cache))
    }

    /// Backpropagation through time over a cached window.
    ///
    /// `hidden_grads[t]` is the loss gradient with respect to the hidden state
    /// output at step `t`. Parameter gradients are accumulated into `grads`;
    /// the gradient with respect to the initial hidden state is returned.
    pub fn backward_sequence(
        &self,
        cache: &GruCache<T>,
        hidden_grads: &[Mat<T>],
        grads: &mut GruCell<T>,
    ) -> Result<Mat<T>, NetError> {
        check_dim("gru gradient window", cache.steps.len(), hidden_grads.len())?;
        let h = self.hidden;
        let Some(first) = cache.steps.first() else {
            return Ok(Mat::zeros(0, h));
        };
        let b = first.prev.rows;
        let mut carry = Mat::zeros(b, h);
        for (step, dh_out) in cache.steps.iter().zip(hidden_grads).rev() {
            check_dim("gru gradient rows", b, dh_out.rows)?;
            let mut dh = dh_out.clone();
            for (d, c) in dh.data.iter_mut().zip(&carry.data) {
                *d += *c;
            }
            carry = self.backward_step(step, &dh, grads);
        }
        Ok(carry)
    }

    fn backward_step(&self, c: &GruStepCache<T>, dh: &Mat<T>, grads: &mut GruCell<T>) -> Mat<T> {
        let (b, h) = (dh.rows, self.hidden);
        let mut dpre = Mat::zeros(b, 3 * h);
        let mut dprev = Mat::zeros(b, h);
        for r in 0..b {
            for j in 0..h {
                let i = r * h + j;
                let (zv, nv, hp) = (c.update.data[i], c.candidate.data[i], c.prev.data[i]);
                let g = dh.data[i];
                dprev.data[i] = g * (T::one() - zv);
                dpre.data[r * 3 * h + j] = g * (nv - hp) * zv * (T::one() - zv);
                dpre.data[r * 3 * h + 2 * h + j] = g * zv * (T::one() - nv * nv);
            }
        }
        // gradient through the candidate's recurrent term
        let mut d_reset_hidden = Mat::zeros(b, h);
        gemm(
            T::one(),
            dpre.view().cols(2 * h, h),
            View::row_major(&self.candidate_weight, h, h).t(),
            T::zero(),
            d_reset_hidden.view_mut(),
        );
        for r in 0..b {
            for j in 0..h {
                let i = r * h + j;
                let rv = c.reset.data[i];
                let drh = d_reset_hidden.data[i];
                dprev.data[i] += drh * rv;
                dpre.data[r * 3 * h + h + j] = drh * c.prev.data[i] * rv * (T::one() - rv);
            }
        }

        gemm(
            T::one(),
            c.input.view().t(),
            dpre.view(),
            T::one(),
            ViewMut::row_major(&mut grads.input_weight, self.inputs, 3 * h),
        );
        gemm(
            T::one(),
            c.prev.view().t(),
            dpre.view().cols(0, 2 * h),
            T::one(),
            ViewMut::row_major(&mut grads.gate_weight, h, 2 * h),
        );
        gemm(
            T::one(),
            c.reset_hidden.view().t(),
            dpre.view().cols(2 * h, h),
            T::one(),
            ViewMut::row_major(&mut grads.candidate_weight, h, h),
        );
        for r in 0..b {
            for (gb, &d) in grads.bias.iter_mut().zip(dpre.row(r)) {
                *gb += d;
            }
        }
        gemm(
            T::one(),
            dpre.view().cols(0, 2 * h),
            View::row_major(&self.gate_weight, h, 2 * h).t(),
            T::one(),
            dprev.view_mut(),
        );
        dprev
    }
}

impl<T: Scalar> Params<T> for GruCell<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let (i, h) = (self.inputs, self.hidden);
        vec![
            TensorRef { name: "input_weight".into(), shape: vec![i, 3 * h], data: &self.input_weight },
            TensorRef { name: "gate_weight".into(), shape: vec![h, 2 * h], data: &self.gate_weight },
            TensorRef { name: "candidate_weight".into(), shape: vec![h, h], data: &self.candidate_weight },
            TensorRef { name: "bias".into(), shape: vec![3 * h], data: &self.bias },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.input_weight, &mut self.gate_weight, &mut self.candidate_weight, &mut self.bias]
    }
}
