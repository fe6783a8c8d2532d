//! Per-view feedforward classifier with a nonnegative evidence head.
//!
//! Hidden layers use the rectifier; the output layer applies softplus so its
//! values can be read as evidence. Cross-entropy baselines reuse the same
//! network with an identity head (logits). Weights are stored `in × out` so a
//! batch `X (B × in)` maps to `X · W + b`.

mod adam;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::view_loss_grad;

pub use adam::{AdamConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softplus,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceNetwork {
    layers: Vec<DenseLayer>,
    output: OutputActivation,
}

/// ln(1 + eᶻ) without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations kept from a batched forward pass.
pub struct ForwardCache {
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }
}

/// Gradients laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl EvidenceNetwork {
    /// Fan-in scaled uniform weights U(−1/√fan_in, 1/√fan_in), zero biases.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut impl Rng) -> Result<Self> {
        Self::build(sizes, output, |fan_in, _| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            rng.random_range(-bound..bound)
        })
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        Self::build(sizes, output, |_, _| 0.0)
    }

    fn build(
        sizes: &[usize],
        output: OutputActivation,
        mut init: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || init(fan_in, fan_out));
                DenseLayer { weight, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.ncols()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Evidence (or logits, for an identity head) for one input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: x.len() });
        }
        let batch = x.insert_axis(Axis(0));
        Ok(self.forward_batch(batch).output.row(0).to_owned())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = current.dot(&layer.weight) + &layer.bias;
            let next = if i < last {
                z.mapv(|v| v.max(0.0))
            } else {
                match self.output {
                    OutputActivation::Softplus => z.mapv(softplus),
                    OutputActivation::Identity => z.clone(),
                }
            };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        ForwardCache { inputs, pre, output: current }
    }

    /// Parameter gradients given the loss gradient on the outputs.
    pub fn backward_batch(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Gradients {
        let last = self.layers.len() - 1;
        let mut delta = match self.output {
            OutputActivation::Softplus => &grad_output * &cache.pre[last].mapv(sigmoid),
            OutputActivation::Identity => grad_output.to_owned(),
        };
        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let weight = cache.inputs[i].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weight.t());
                back.zip_mut_with(&cache.pre[i - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(DenseLayer { weight, bias });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Gradient of the evidential view loss of one input, plus an optional
    /// upstream gradient on the evidence (e.g. from the fused term).
    pub fn backward(
        &self,
        x: ArrayView1<f64>,
        label: usize,
        lambda: f64,
        upstream: Option<&[f64]>,
    ) -> Result<Gradients> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: x.len() });
        }
        let cache = self.forward_batch(x.insert_axis(Axis(0)));
        let alpha: Vec<f64> = cache.output.row(0).iter().map(|e| e + 1.0).collect();
        let mut g = view_loss_grad(&alpha, label, lambda);
        if let Some(up) = upstream {
            if up.len() != g.len() {
                return Err(Error::DimensionMismatch { expected: g.len(), actual: up.len() });
            }
            g.iter_mut().zip(up).for_each(|(a, b)| *a += b);
        }
        let g = Array2::from_shape_vec((1, g.len()), g).expect("row vector");
        Ok(self.backward_batch(&cache, g.view()))
    }
}
