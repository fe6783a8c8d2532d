//! Evidential classification: evidence → Dirichlet → subjective opinion, and
//! the per-view loss (expected cross-entropy under the Dirichlet plus an
//! annealed KL term towards the uniform Dirichlet).
//!
//! Losses take the true class as an index; the one-hot vector is implicit.
//! The slice-level functions (`*_grad`, [`opinion_backward`]) are the hot
//! path used during training and return derivatives with respect to α.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma, trigamma};

const SUM_TOLERANCE: f64 = 1e-9;

/// Dirichlet concentration parameters, every α_k ≥ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    strength: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidDirichlet("no classes".into()));
        }
        if let Some((k, a)) = alpha.iter().enumerate().find(|(_, &a)| !(a >= 1.0) || !a.is_finite()) {
            return Err(Error::InvalidDirichlet(format!("alpha[{k}] = {a} is below 1")));
        }
        let strength = alpha.iter().sum();
        Ok(Self { alpha, strength })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// α₀ = Σ α_k
    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn class_count(&self) -> usize {
        self.alpha.len()
    }

    /// Mean of the Dirichlet, α_k / α₀.
    pub fn expected_probs(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.strength).collect()
    }
}

/// Belief masses b_k and uncertainty mass u with Σb_k + u = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveOpinion {
    beliefs: Vec<f64>,
    uncertainty: f64,
}

impl SubjectiveOpinion {
    pub fn new(beliefs: Vec<f64>, uncertainty: f64) -> Result<Self> {
        if beliefs.is_empty() {
            return Err(Error::InvalidOpinion("no classes".into()));
        }
        if beliefs.iter().chain([&uncertainty]).any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidOpinion("masses must be nonnegative".into()));
        }
        let total = beliefs.iter().sum::<f64>() + uncertainty;
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidOpinion(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { beliefs, uncertainty })
    }

    /// Construct without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(beliefs: Vec<f64>, uncertainty: f64) -> Self {
        Self { beliefs, uncertainty }
    }

    /// b = 0, u = 1.
    pub fn vacuous(class_count: usize) -> Self {
        Self { beliefs: vec![0.0; class_count], uncertainty: 1.0 }
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn class_count(&self) -> usize {
        self.beliefs.len()
    }

    /// Class with the largest belief; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        argmax(&self.beliefs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// λ = min(F, epoch / E).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub final_value: f64,
    pub decay_epochs: usize,
}

impl AnnealSchedule {
    pub fn new(final_value: f64, decay_epochs: usize) -> Result<Self> {
        if !(final_value > 0.0 && final_value <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "anneal final value {final_value} is outside (0, 1]"
            )));
        }
        if decay_epochs == 0 {
            return Err(Error::InvalidConfig("anneal decay epochs must be at least 1".into()));
        }
        Ok(Self { final_value, decay_epochs })
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self { final_value: 1.0, decay_epochs: 50 }
    }
}

pub fn anneal_lambda(epoch: usize, schedule: &AnnealSchedule) -> f64 {
    schedule
        .final_value
        .min(epoch as f64 / schedule.decay_epochs as f64)
}

/// α_k = e_k + 1.
pub fn evidence_to_dirichlet(evidence: &[f64]) -> Result<DirichletParams> {
    if let Some((class, &value)) = evidence.iter().enumerate().find(|(_, &e)| !(e >= 0.0)) {
        return Err(Error::NegativeEvidence { class, value });
    }
    DirichletParams::new(evidence.iter().map(|e| e + 1.0).collect())
}

/// b_k = (α_k − 1)/α₀ and u = K/α₀.
pub fn dirichlet_to_opinion(d: &DirichletParams) -> SubjectiveOpinion {
    let (beliefs, u) = opinion_from_alpha(d.alpha());
    SubjectiveOpinion::from_parts(beliefs, u)
}

pub(crate) fn opinion_from_alpha(alpha: &[f64]) -> (Vec<f64>, f64) {
    let s: f64 = alpha.iter().sum();
    let beliefs = alpha.iter().map(|a| (a - 1.0) / s).collect();
    (beliefs, alpha.len() as f64 / s)
}

/// Pull gradients on (b, u) back to α through [`dirichlet_to_opinion`].
pub fn opinion_backward(alpha: &[f64], grad_beliefs: &[f64], grad_u: f64) -> Vec<f64> {
    let s: f64 = alpha.iter().sum();
    let k = alpha.len() as f64;
    let shared: f64 = alpha
        .iter()
        .zip(grad_beliefs)
        .map(|(a, g)| g * (a - 1.0) / s)
        .sum::<f64>()
        + grad_u * k / s;
    grad_beliefs.iter().map(|g| (g - shared) / s).collect()
}

/// Expected cross-entropy under Dir(α): ψ(α₀) − ψ(α_y).
pub fn ace_loss(d: &DirichletParams, label: usize) -> f64 {
    ace_loss_alpha(d.alpha(), label)
}

pub(crate) fn ace_loss_alpha(alpha: &[f64], label: usize) -> f64 {
    let s: f64 = alpha.iter().sum();
    digamma(s) - digamma(alpha[label])
}

pub fn ace_loss_grad(alpha: &[f64], label: usize) -> Vec<f64> {
    let s: f64 = alpha.iter().sum();
    let shared = trigamma(s);
    let mut g = vec![shared; alpha.len()];
    g[label] -= trigamma(alpha[label]);
    g
}

/// KL[Dir(α̃) ‖ Dir(1, …, 1)] where α̃ replaces the true-class entry by 1.
pub fn kl_regularizer(d: &DirichletParams, label: usize) -> f64 {
    kl_regularizer_alpha(d.alpha(), label)
}

fn masked(alpha: &[f64], label: usize) -> Vec<f64> {
    let mut t = alpha.to_vec();
    t[label] = 1.0;
    t
}

pub(crate) fn kl_regularizer_alpha(alpha: &[f64], label: usize) -> f64 {
    let t = masked(alpha, label);
    let s: f64 = t.iter().sum();
    let psi_s = digamma(s);
    let mut kl = ln_gamma(s) - ln_gamma(t.len() as f64);
    for &a in &t {
        kl += (a - 1.0) * (digamma(a) - psi_s) - ln_gamma(a);
    }
    kl.max(0.0)
}

pub fn kl_regularizer_grad(alpha: &[f64], label: usize) -> Vec<f64> {
    let t = masked(alpha, label);
    let s: f64 = t.iter().sum();
    let shared = (s - t.len() as f64) * trigamma(s);
    t.iter()
        .enumerate()
        .map(|(k, &a)| if k == label { 0.0 } else { (a - 1.0) * trigamma(a) - shared })
        .collect()
}

/// L_c + λ L_r.
pub fn view_loss(d: &DirichletParams, label: usize, lambda: f64) -> f64 {
    ace_loss(d, label) + lambda * kl_regularizer(d, label)
}

/// Value and α-gradient of the view loss, split as (ace, kl).
pub(crate) fn view_loss_with_grad(alpha: &[f64], label: usize, lambda: f64) -> (f64, f64, Vec<f64>) {
    let ace = ace_loss_alpha(alpha, label);
    let kl = kl_regularizer_alpha(alpha, label);
    let mut g = ace_loss_grad(alpha, label);
    if lambda != 0.0 {
        for (gi, r) in g.iter_mut().zip(kl_regularizer_grad(alpha, label)) {
            *gi += lambda * r;
        }
    }
    (ace, kl, g)
}

pub fn view_loss_grad(alpha: &[f64], label: usize, lambda: f64) -> Vec<f64> {
    view_loss_with_grad(alpha, label, lambda).2
}
