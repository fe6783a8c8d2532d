//! Independent reference computations shared by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use evifuse::evidential::{dirichlet_to_opinion, evidence_to_dirichlet};
use evifuse::fusion::{ds_fold, fused_dirichlet, sample_objective, total_loss};
use evifuse::network::{EvidenceNetwork, OutputActivation};
use evifuse::MultiViewDataset;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// ∫₀¹ f(p, 1 − p) dp by the tanh-sinh rule. The complement is passed
/// separately so integrands stay accurate near p = 1.
pub fn tanh_sinh(f: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let steps = (4.5 / h) as i64;
    let mut sum = 0.0;
    for i in -steps..=steps {
        let t = i as f64 * h;
        let u = FRAC_PI_2 * t.sinh();
        let p = 1.0 / (1.0 + (-2.0 * u).exp());
        let q = 1.0 / (1.0 + (2.0 * u).exp());
        let w = FRAC_PI_2 * t.cosh() * 2.0 * p * q;
        if w > 0.0 && p > 0.0 && q > 0.0 {
            sum += w * f(p, q);
        }
    }
    sum * h
}

/// E[g(p)] for p ~ Beta(a, b), normalized by quadrature as well.
pub fn beta_expectation(a: f64, b: f64, g: impl Fn(f64, f64) -> f64) -> f64 {
    let density = |p: f64, q: f64| ((a - 1.0) * p.ln() + (b - 1.0) * q.ln()).exp();
    let mass = tanh_sinh(density);
    tanh_sinh(|p, q| density(p, q) * g(p, q)) / mass
}

/// Expected cross-entropy −E[ln p_y] under Dir(α) for two classes.
pub fn ace_by_quadrature(alpha: [f64; 2], label: usize) -> f64 {
    beta_expectation(alpha[0], alpha[1], |p, q| -(if label == 0 { p } else { q }).ln())
}

/// KL[Beta(a, b) ‖ Uniform] = E[ln f] by quadrature.
pub fn kl_uniform_by_quadrature(a: f64, b: f64) -> f64 {
    let log_density = |p: f64, q: f64| (a - 1.0) * p.ln() + (b - 1.0) * q.ln();
    let mass = tanh_sinh(|p, q| log_density(p, q).exp());
    beta_expectation(a, b, |p, q| log_density(p, q) - mass.ln())
}

/// Fused plus per-view loss of one instance, built from the public scalar
/// operations only.
pub fn reference_loss(networks: &[EvidenceNetwork], inputs: &[Array1<f64>], label: usize, lambda: f64) -> f64 {
    let dirichlets: Vec<_> = networks
        .iter()
        .zip(inputs)
        .map(|(net, x)| evidence_to_dirichlet(net.forward(x.view()).unwrap().as_slice().unwrap()).unwrap())
        .collect();
    let opinions: Vec<_> = dirichlets.iter().map(dirichlet_to_opinion).collect();
    let fused = fused_dirichlet(&ds_fold(&opinions).unwrap()).unwrap();
    total_loss(&dirichlets, &fused, label, lambda)
}

/// Worst relative error between analytic parameter gradients of the total
/// loss (fusion included) and central differences over a random
/// configuration. Denominators are floored at `floor`.
pub fn fusion_gradient_check(seed: u64, views: usize, classes: usize, h: f64, floor: f64) -> f64 {
    let mut r = rng(seed);
    let dims: Vec<usize> = (0..views).map(|_| r.random_range(2..6)).collect();
    let hidden = r.random_range(3..7);
    let mut networks: Vec<EvidenceNetwork> = dims
        .iter()
        .map(|&d| EvidenceNetwork::new(&[d, hidden, classes], OutputActivation::Softplus, &mut r).unwrap())
        .collect();
    // larger biases give the heads varied, nontrivial evidence
    for net in &mut networks {
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| r.random_range(-0.5..1.5));
        }
    }
    let inputs: Vec<Array1<f64>> = dims
        .iter()
        .map(|&d| Array1::from_shape_fn(d, |_| r.random_range(-2.0..2.0)))
        .collect();
    let label = r.random_range(0..classes);
    let lambda = r.random_range(0.0..1.0);

    let caches: Vec<_> = networks
        .iter()
        .zip(&inputs)
        .map(|(n, x)| n.forward_batch(x.view().insert_axis(Axis(0))))
        .collect();
    let evidence: Vec<Vec<f64>> = caches.iter().map(|c| c.output().row(0).to_vec()).collect();
    let slices: Vec<&[f64]> = evidence.iter().map(|e| e.as_slice()).collect();
    let (_, grads) = sample_objective(&slices, label, lambda, false).unwrap();
    let analytic: Vec<_> = networks
        .iter()
        .zip(&caches)
        .zip(&grads)
        .map(|((n, c), g)| n.backward_batch(c, Array2::from_shape_vec((1, classes), g.clone()).unwrap().view()))
        .collect();

    let mut worst: f64 = 0.0;
    for v in 0..views {
        for l in 0..networks[v].layers().len() {
            let (rows, cols) = networks[v].layers()[l].weight.dim();
            let mut params: Vec<(Option<(usize, usize)>, usize)> = Vec::new();
            for i in 0..rows {
                for j in 0..cols {
                    params.push((Some((i, j)), 0));
                }
            }
            for j in 0..cols {
                params.push((None, j));
            }
            for (idx, j) in params {
                let bump = |nets: &mut Vec<EvidenceNetwork>, delta: f64| {
                    let layer = &mut nets[v].layers_mut()[l];
                    match idx {
                        Some(ij) => layer.weight[ij] += delta,
                        None => layer.bias[j] += delta,
                    }
                };
                bump(&mut networks, h);
                let up = reference_loss(&networks, &inputs, label, lambda);
                bump(&mut networks, -2.0 * h);
                let down = reference_loss(&networks, &inputs, label, lambda);
                bump(&mut networks, h);
                let fd = (up - down) / (2.0 * h);
                let g = &analytic[v].layers[l];
                let a = match idx {
                    Some(ij) => g.weight[ij],
                    None => g.bias[j],
                };
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
            }
        }
    }
    worst
}

/// Neighbour union by brute force: for each observed view of the sample,
/// sort every eligible row by squared distance (ties by index) and keep the
/// first k.
pub fn scan_neighbors(data: &MultiViewDataset, sample: usize, missing: usize, k: usize, use_labels: bool) -> Vec<usize> {
    let mut union = BTreeSet::new();
    for v in 0..data.n_views() {
        if v == missing || !data.is_observed(sample, v) {
            continue;
        }
        let mut scored: Vec<(f64, usize)> = Vec::new();
        for j in 0..data.n_samples() {
            if j == sample || !data.is_observed(j, v) || !data.is_observed(j, missing) {
                continue;
            }
            if use_labels && data.labels()[j] != data.labels()[sample] {
                continue;
            }
            let d: f64 = data.row(sample, v).iter().zip(data.row(j, v)).map(|(a, b)| (a - b).powi(2)).sum();
            scored.push((d, j));
        }
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        union.extend(scored.into_iter().take(k).map(|(_, j)| j));
    }
    union.into_iter().collect()
}

/// Random incomplete dataset with every sample keeping at least one view.
pub fn random_dataset(seed: u64, n: usize, dims: &[usize], classes: usize, missing_prob: f64) -> MultiViewDataset {
    let mut r = rng(seed);
    let views: Vec<Array2<f64>> = dims
        .iter()
        .map(|&d| Array2::from_shape_fn((n, d), |_| r.random_range(-3.0..3.0)))
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut mask = Array2::from_elem((n, dims.len()), true);
    for i in 0..n {
        for v in 0..dims.len() {
            if r.random_bool(missing_prob) {
                mask[[i, v]] = false;
            }
        }
        if mask.row(i).iter().all(|&m| !m) {
            mask[[i, r.random_range(0..dims.len())]] = true;
        }
    }
    MultiViewDataset::new(views, labels, Some(mask)).unwrap()
}
