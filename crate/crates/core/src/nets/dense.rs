use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scalar::{gemm, Mat, Scalar, View};
use super::{check_dim, NetError, Params, TensorRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Linear => T::one(),
        }
    }
}

/// Affine map `y = act(x W + b)` with `W` stored `inputs × outputs`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

/// Feedforward stack: tanh on hidden layers, linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseStack<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer activations retained by [`DenseStack::forward`].
///
/// `activations[0]` is the input batch; `activations[k + 1]` is the output of
/// layer `k`.
#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    pub activations: Vec<Mat<T>>,
}

impl<T> DenseCache<T> {
    pub fn output(&self) -> &Mat<T> {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl<T: Scalar> DenseStack<T> {
    /// All-zero stack with the given layer sizes, e.g. `[30, 256, 128, 64]`.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a stack needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| Layer {
                inputs: sizes[k],
                outputs: sizes[k + 1],
                weight: vec![T::zero(); sizes[k] * sizes[k + 1]],
                bias: vec![T::zero(); sizes[k + 1]],
                activation: if k + 1 == n { Activation::Linear } else { Activation::Tanh },
            })
            .collect();
        Self { layers }
    }

    /// Orthogonal initialization: each weight matrix is the orthonormal factor
    /// of a Gaussian matrix times `hidden_gain`, except the last layer which
    /// uses `output_gain`. Biases start at zero.
    pub fn orthogonal<R: Rng + ?Sized>(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        let mut stack = Self::zeros(sizes);
        let n = stack.layers.len();
        for (k, layer) in stack.layers.iter_mut().enumerate() {
            let gain = if k + 1 == n { output_gain } else { hidden_gain };
            let w = orthogonal_matrix(layer.inputs, layer.outputs, rng);
            for (dst, src) in layer.weight.iter_mut().zip(w) {
                *dst = T::of(src * gain);
            }
        }
        stack
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Batched forward pass over the rows of `input`, keeping activations.
    pub fn forward(&self, input: &Mat<T>) -> Result<DenseCache<T>, NetError> {
        check_dim("dense input width", self.input_size(), input.cols)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let next = layer.apply(activations.last().unwrap());
            activations.push(next);
        }
        Ok(DenseCache { activations })
    }

    /// Batched forward pass without a cache.
    pub fn forward_only(&self, input: &Mat<T>) -> Result<Mat<T>, NetError> {
        check_dim("dense input width", self.input_size(), input.cols)?;
        let mut x = self.layers[0].apply(input);
        for layer in &self.layers[1..] {
            x = layer.apply(&x);
        }
        Ok(x)
    }

    /// Forward pass on a single input vector.
    pub fn forward_vec(&self, input: &[T]) -> Result<Vec<T>, NetError> {
        let m = Mat::from_vec(1, input.len(), input.to_vec());
        Ok(self.forward_only(&m)?.data)
    }

    /// Reverse pass. Parameter gradients are accumulated into `grads`; the
    /// gradient with respect to the input batch is returned.
    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        output_grad: &Mat<T>,
        grads: &mut DenseStack<T>,
    ) -> Result<Mat<T>, NetError> {
        let out = cache.output();
        check_dim("output gradient rows", out.rows, output_grad.rows)?;
        check_dim("output gradient width", out.cols, output_grad.cols)?;
        check_dim("gradient stack depth", self.layers.len(), grads.layers.len())?;
        let batch = out.rows;
        let mut delta = output_grad.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let y = &cache.activations[k + 1];
            let x = &cache.activations[k];
            if layer.activation != Activation::Linear {
                for (d, &yv) in delta.data.iter_mut().zip(&y.data) {
                    *d *= layer.activation.derivative_from_output(yv);
                }
            }
            let g = &mut grads.layers[k];
            // dW += xᵀ δ
            gemm(
                T::one(),
                x.view().t(),
                delta.view(),
                T::one(),
                super::ViewMut::row_major(&mut g.weight, layer.inputs, layer.outputs),
            );
            for r in 0..batch {
                for (b, &d) in g.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            // δ_prev = δ Wᵀ
            let mut prev = Mat::zeros(batch, layer.inputs);
            gemm(
                T::one(),
                delta.view(),
                View::row_major(&layer.weight, layer.inputs, layer.outputs).t(),
                T::zero(),
                prev.view_mut(),
            );
            delta = prev;
        }
        Ok(delta)
    }
}

impl<T: Scalar> Layer<T> {
    fn apply(&self, x: &Mat<T>) -> Mat<T> {
        let mut y = Mat::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(T::one(), x.view(), View::row_major(&self.weight, self.inputs, self.outputs), T::one(), y.view_mut());
        if self.activation != Activation::Linear {
            for v in &mut y.data {
                *v = self.activation.apply(*v);
            }
        }
        y
    }
}

impl<T: Scalar> Params<T> for DenseStack<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            out.push(TensorRef { name: format!("l{k}.w"), shape: vec![l.inputs, l.outputs], data: &l.weight });
            out.push(TensorRef { name: format!("l{k}.b"), shape: vec![l.outputs], data: &l.bias });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }
}

/// `rows × cols` matrix with orthonormal columns (or rows, when wide).
pub(crate) fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix so the distribution is uniform over orthogonal matrices
    for c in 0..short {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
        }
    }
    out
}
