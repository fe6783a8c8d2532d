use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{EvidenceNetwork, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Moments {
    weight_m: Array2<f64>,
    weight_v: Array2<f64>,
    bias_m: Array1<f64>,
    bias_v: Array1<f64>,
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(net: &EvidenceNetwork, config: AdamConfig) -> Self {
        let moments = net
            .layers()
            .iter()
            .map(|l| Moments {
                weight_m: Array2::zeros(l.weight.dim()),
                weight_v: Array2::zeros(l.weight.dim()),
                bias_m: Array1::zeros(l.bias.len()),
                bias_v: Array1::zeros(l.bias.len()),
            })
            .collect();
        Self { config, step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected update. Fails without touching the network
    /// when any gradient is non-finite.
    pub fn step(&mut self, net: &mut EvidenceNetwork, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.moments.len() {
            return Err(Error::DimensionMismatch {
                expected: self.moments.len(),
                actual: grads.layers.len(),
            });
        }
        for (l, g) in grads.layers.iter().enumerate() {
            if let Some(((i, j), _)) = g.weight.indexed_iter().find(|(_, x)| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { path: format!("layer[{l}].weight[{i},{j}]") });
            }
            if let Some((i, _)) = g.bias.indexed_iter().find(|(_, x)| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { path: format!("layer[{l}].bias[{i}]") });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let eps = c.epsilon * (1.0 - c.beta2.powi(t)).sqrt();
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            let g = g + c.weight_decay * *p;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        };
        for ((layer, g), mom) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.moments) {
            Zip::from(&mut layer.weight)
                .and(&mut mom.weight_m)
                .and(&mut mom.weight_v)
                .and(&g.weight)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&mut mom.bias_m)
                .and(&mut mom.bias_v)
                .and(&g.bias)
                .for_each(update);
        }
        Ok(())
    }
}
