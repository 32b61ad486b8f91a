use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Silu,
    Tanh,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Silu => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z` with output `y = apply(z)`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// One affine layer: `weight` is `[out, in]`, `bias` is `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![output, input]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Gradients laid out exactly like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.values().iter().chain(l.bias.values()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            let Dense { weight, bias } = l;
            weight.values_mut().iter_mut().chain(bias.values_mut().iter_mut())
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += factor * b;
        }
    }

    /// Rescales in place so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
        }
    }
}

/// Activations recorded by [`Mlp::forward_trace`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Tensor>,
    /// Pre-activation of each layer.
    pre: Vec<Tensor>,
    /// Post-activation of each layer (the last one is the output).
    post: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.post.last().expect("trace of a network with at least one layer")
    }
}

#[derive(Debug)]
pub struct Backward {
    pub grads: Gradients,
    pub input_grad: Tensor,
}

/// Fully connected network with a shared hidden activation and a separate
/// output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
    seed: u64,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/√fan_in, 1/√fan_in)` for weights
    /// and biases.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                let weight = draw(fan_in * fan_out);
                let bias = draw(fan_out);
                Dense {
                    weight: Tensor::new(vec![fan_out, fan_in], weight).expect("sized"),
                    bias: Tensor::vector(bias),
                }
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            hidden,
            output,
            seed,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        let mut sizes = vec![layers[0].input_dim()];
        for layer in &layers {
            if layer.input_dim() != *sizes.last().unwrap() {
                return Err(Error::shape(
                    "Mlp::from_layers",
                    &[*sizes.last().unwrap()],
                    &[layer.input_dim()],
                ));
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::shape("Mlp::from_layers bias", &[layer.output_dim()], &[layer.bias.len()]));
            }
            sizes.push(layer.output_dim());
        }
        Ok(Self {
            sizes,
            layers,
            hidden,
            output,
            seed,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.values().iter().chain(l.bias.values()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            let Dense { weight, bias } = l;
            weight.values_mut().iter_mut().chain(bias.values_mut().iter_mut())
        })
    }

    pub fn param_vec(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    /// Copies `other`'s parameters into `self` with Polyak averaging:
    /// `p ← (1-tau)·p + tau·q`.
    pub fn soft_update(&mut self, other: &Mlp, tau: f64) {
        for (p, q) in self.params_mut().zip(other.params()) {
            *p = (1.0 - tau) * *p + tau * q;
        }
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn as_batch(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.input_dim() || input.shape().is_empty() {
            return Err(Error::shape("Mlp input", &[self.input_dim()], input.shape()));
        }
        Tensor::matrix(input.rows(), input.cols(), input.values().to_vec())
    }

    fn restore_shape(input: &Tensor, out: Tensor) -> Tensor {
        if input.shape().len() == 1 {
            Tensor::vector(out.into_values())
        } else {
            let mut shape = input.shape().to_vec();
            *shape.last_mut().unwrap() = out.cols();
            Tensor::new(shape, out.into_values()).expect("same element count")
        }
    }

    fn affine(layer: &Dense, x: &Tensor) -> Tensor {
        let (n, din, dout) = (x.rows(), layer.input_dim(), layer.output_dim());
        let mut z = vec![0.0; n * dout];
        for row in z.chunks_mut(dout) {
            row.copy_from_slice(layer.bias.values());
        }
        gemm(n, din, dout, x.values(), false, layer.weight.values(), true, &mut z, 1.0);
        Tensor::matrix(n, dout, z).expect("sized")
    }

    /// Evaluates the network on a single vector (`[in]`) or a batch
    /// (`[..., in]`). Output keeps the leading shape.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.as_batch(input)?;
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let mut z = Self::affine(layer, &x);
            if act != Activation::Identity {
                z.values_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            x = z;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "Mlp::forward output".into(),
            });
        }
        Ok(Self::restore_shape(input, x))
    }

    /// Forward pass that keeps per-layer activations. The trace's output is
    /// always a `[batch, out]` matrix.
    pub fn forward_trace(&self, input: &Tensor) -> Result<ForwardTrace> {
        let mut x = self.as_batch(input)?;
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let z = Self::affine(layer, &x);
            let mut y = z.clone();
            if act != Activation::Identity {
                y.values_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            trace.inputs.push(x);
            trace.pre.push(z);
            trace.post.push(y.clone());
            x = y;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "Mlp::forward_trace output".into(),
            });
        }
        Ok(trace)
    }

    /// Gradients of `Σ upstream ⊙ output` with respect to every parameter and
    /// to the input, given a recorded trace.
    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: &Tensor) -> Result<Backward> {
        let out = trace.output();
        if upstream.len() != out.len() {
            return Err(Error::shape("Mlp::backward upstream", out.shape(), upstream.shape()));
        }
        if !upstream.is_finite() {
            return Err(Error::NonFinite {
                context: "Mlp::backward upstream gradient".into(),
            });
        }
        let n = out.rows();
        let mut delta = upstream.values().to_vec();
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let act = self.activation(i);
            let (din, dout) = (layer.input_dim(), layer.output_dim());
            if act != Activation::Identity {
                let z = trace.pre[i].values();
                let y = trace.post[i].values();
                for ((d, &zv), &yv) in delta.iter_mut().zip(z).zip(y) {
                    *d *= act.derivative(zv, yv);
                }
            }
            let mut dw = vec![0.0; dout * din];
            gemm(dout, n, din, &delta, true, trace.inputs[i].values(), false, &mut dw, 0.0);
            let mut db = vec![0.0; dout];
            for row in delta.chunks(dout) {
                for (b, d) in db.iter_mut().zip(row) {
                    *b += d;
                }
            }
            let mut dx = vec![0.0; n * din];
            gemm(n, dout, din, &delta, false, layer.weight.values(), false, &mut dx, 0.0);
            grads.push(Dense {
                weight: Tensor::matrix(dout, din, dw).expect("sized"),
                bias: Tensor::vector(db),
            });
            delta = dx;
        }
        grads.reverse();
        Ok(Backward {
            grads: Gradients { layers: grads },
            input_grad: Tensor::matrix(n, self.input_dim(), delta).expect("sized"),
        })
    }

    /// Recomputes the forward pass and returns exact gradients of the scalar
    /// `Σ upstream ⊙ forward(input)`.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<Backward> {
        let trace = self.forward_trace(input)?;
        if upstream.cols() != self.output_dim() || upstream.rows() != trace.output().rows() {
            return Err(Error::shape("Mlp::backward upstream", trace.output().shape(), upstream.shape()));
        }
        let mut b = self.backward_trace(&trace, upstream)?;
        b.input_grad = Self::restore_shape(input, b.input_grad);
        Ok(b)
    }
}
