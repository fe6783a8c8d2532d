//! Dempster's combination of subjective opinions and the multi-task
//! objective that scores both the fused opinion and every view.
//!
//! For two opinions with conflict C = Σ_{i≠j} b¹_i b²_j the rule gives
//!
//! ```text
//! b_k = (b¹_k b²_k + b¹_k u² + b²_k u¹) / (1 − C)
//! u   = u¹ u² / (1 − C)
//! ```
//!
//! A fused opinion is mapped back to a Dirichlet with strength S = K/u and
//! α_k = b_k S + 1. [`sample_objective`] evaluates the fused and per-view
//! losses for one instance and differentiates them with respect to every
//! view's evidence, including the path through the fold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{
    opinion_backward, opinion_from_alpha, view_loss, view_loss_with_grad, DirichletParams,
    SubjectiveOpinion,
};

/// Fusion aborts when 1 − C drops to this value or below.
pub const CONFLICT_TOLERANCE: f64 = 1e-12;

struct PairParts {
    beliefs: Vec<f64>,
    uncertainty: f64,
    denom: f64,
}

fn combine_raw(b1: &[f64], u1: f64, b2: &[f64], u2: f64) -> Option<PairParts> {
    let sum1: f64 = b1.iter().sum();
    let sum2: f64 = b2.iter().sum();
    let agree: f64 = b1.iter().zip(b2).map(|(x, y)| x * y).sum();
    let conflict = sum1 * sum2 - agree;
    let denom = 1.0 - conflict;
    if !(denom > CONFLICT_TOLERANCE) {
        return None;
    }
    let beliefs = b1
        .iter()
        .zip(b2)
        .map(|(x, y)| (x * y + x * u2 + y * u1) / denom)
        .collect();
    Some(PairParts { beliefs, uncertainty: u1 * u2 / denom, denom })
}

fn conflict_margin(b1: &[f64], b2: &[f64]) -> f64 {
    let sum1: f64 = b1.iter().sum();
    let sum2: f64 = b2.iter().sum();
    let agree: f64 = b1.iter().zip(b2).map(|(x, y)| x * y).sum();
    1.0 - (sum1 * sum2 - agree)
}

/// Combine two opinions over the same classes with Dempster's rule.
pub fn ds_combine_pair(s1: &SubjectiveOpinion, s2: &SubjectiveOpinion) -> Result<SubjectiveOpinion> {
    if s1.class_count() != s2.class_count() {
        return Err(Error::DimensionMismatch {
            expected: s1.class_count(),
            actual: s2.class_count(),
        });
    }
    combine_raw(s1.beliefs(), s1.uncertainty(), s2.beliefs(), s2.uncertainty())
        .map(|p| SubjectiveOpinion::from_parts(p.beliefs, p.uncertainty))
        .ok_or_else(|| Error::TotalConflict {
            view: 1,
            margin: conflict_margin(s1.beliefs(), s2.beliefs()),
        })
}

/// Left fold of [`ds_combine_pair`]. A conflict error names the view that
/// could not be merged into the opinion accumulated so far.
pub fn ds_fold(opinions: &[SubjectiveOpinion]) -> Result<SubjectiveOpinion> {
    let (first, rest) = opinions
        .split_first()
        .ok_or_else(|| Error::InvalidOpinion("cannot fuse zero opinions".into()))?;
    rest.iter().enumerate().try_fold(first.clone(), |acc, next| {
        let (i, s) = next;
        ds_combine_pair(&acc, s).map_err(|e| match e {
            Error::TotalConflict { margin, .. } => Error::TotalConflict { view: i + 1, margin },
            other => other,
        })
    })
}

/// Dirichlet with strength K/u whose opinion is `s`.
pub fn fused_dirichlet(s: &SubjectiveOpinion) -> Result<DirichletParams> {
    if !(s.uncertainty() > 0.0) {
        return Err(Error::CertainOpinion);
    }
    DirichletParams::new(alpha_from_opinion(s.beliefs(), s.uncertainty()))
}

fn alpha_from_opinion(beliefs: &[f64], u: f64) -> Vec<f64> {
    let strength = beliefs.len() as f64 / u;
    beliefs.iter().map(|b| b * strength + 1.0).collect()
}

/// Fused-opinion loss plus the sum of per-view losses.
pub fn total_loss(
    per_view: &[DirichletParams],
    fused: &DirichletParams,
    label: usize,
    lambda: f64,
) -> f64 {
    view_loss(fused, label, lambda)
        + per_view
            .iter()
            .map(|d| view_loss(d, label, lambda))
            .sum::<f64>()
}

/// Loss terms for one instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Loss of the fused Dirichlet (expected cross-entropy + λ·KL).
    pub fused: f64,
    /// Loss of each view's Dirichlet.
    pub per_view: Vec<f64>,
    /// λ-weighted KL contributions summed over fused and per-view terms.
    pub regularizer: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.fused + self.per_view.iter().sum::<f64>()
    }
}

/// Loss and per-view evidence gradients for one instance.
///
/// `evidences[v]` is the nonnegative output of view v's network. With
/// `detach_fusion` the fused term still contributes to the loss value but
/// sends no gradient into the views.
pub fn sample_objective(
    evidences: &[&[f64]],
    label: usize,
    lambda: f64,
    detach_fusion: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let views = evidences.len();
    let alphas: Vec<Vec<f64>> = evidences
        .iter()
        .map(|e| e.iter().map(|x| x + 1.0).collect())
        .collect();

    let mut breakdown = LossBreakdown { per_view: Vec::with_capacity(views), ..Default::default() };
    let mut grads = Vec::with_capacity(views);
    for alpha in &alphas {
        let (ace, kl, g) = view_loss_with_grad(alpha, label, lambda);
        breakdown.per_view.push(ace + lambda * kl);
        breakdown.regularizer += lambda * kl;
        grads.push(g);
    }

    // Forward fold, keeping every intermediate for the reverse pass.
    let opinions: Vec<(Vec<f64>, f64)> = alphas.iter().map(|a| opinion_from_alpha(a)).collect();
    let mut acc: Vec<(Vec<f64>, f64)> = Vec::with_capacity(views);
    let mut denoms = Vec::with_capacity(views);
    acc.push(opinions[0].clone());
    for (v, (b2, u2)) in opinions.iter().enumerate().skip(1) {
        let (b1, u1) = &acc[v - 1];
        let parts = combine_raw(b1, *u1, b2, *u2).ok_or_else(|| Error::TotalConflict {
            view: v,
            margin: conflict_margin(b1, b2),
        })?;
        denoms.push(parts.denom);
        acc.push((parts.beliefs, parts.uncertainty));
    }
    let (fused_b, fused_u) = acc.last().expect("at least one view");
    if !(*fused_u > 0.0) {
        return Err(Error::CertainOpinion);
    }
    let fused_alpha = alpha_from_opinion(fused_b, *fused_u);
    let (ace, kl, g_fused_alpha) = view_loss_with_grad(&fused_alpha, label, lambda);
    breakdown.fused = ace + lambda * kl;
    breakdown.regularizer += lambda * kl;

    if detach_fusion {
        return Ok((breakdown, grads));
    }

    // α^m_k = b_k S + 1 with S = K/u.
    let strength = fused_alpha.len() as f64 / fused_u;
    let mut gb: Vec<f64> = g_fused_alpha.iter().map(|g| g * strength).collect();
    let g_strength: f64 = g_fused_alpha.iter().zip(fused_b).map(|(g, b)| g * b).sum();
    let mut gu = -g_strength * strength / fused_u;

    // Reverse through the fold.
    for v in (1..views).rev() {
        let (b1, u1) = &acc[v - 1];
        let (b2, u2) = &opinions[v];
        let (b, u) = &acc[v];
        let denom = denoms[v - 1];
        let sum1: f64 = b1.iter().sum();
        let sum2: f64 = b2.iter().sum();
        // dL/dC, from b and u both scaling as 1/(1 − C)
        let g_conflict = (gb.iter().zip(b).map(|(g, x)| g * x).sum::<f64>() + gu * u) / denom;
        let gb1: Vec<f64> = (0..b1.len())
            .map(|k| gb[k] * (b2[k] + u2) / denom + g_conflict * (sum2 - b2[k]))
            .collect();
        let gb2: Vec<f64> = (0..b2.len())
            .map(|k| gb[k] * (b1[k] + u1) / denom + g_conflict * (sum1 - b1[k]))
            .collect();
        let gu1 = (gb.iter().zip(b2.iter()).map(|(g, x)| g * x).sum::<f64>() + gu * u2) / denom;
        let gu2 = (gb.iter().zip(b1.iter()).map(|(g, x)| g * x).sum::<f64>() + gu * u1) / denom;
        for (g, d) in grads[v].iter_mut().zip(opinion_backward(&alphas[v], &gb2, gu2)) {
            *g += d;
        }
        gb = gb1;
        gu = gu1;
    }
    for (g, d) in grads[0].iter_mut().zip(opinion_backward(&alphas[0], &gb, gu)) {
        *g += d;
    }
    Ok((breakdown, grads))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Mean of the per-view softmax probabilities.
pub fn average_probabilities(logits: &[&[f64]]) -> Vec<f64> {
    let mut mean = vec![0.0; logits[0].len()];
    for z in logits {
        for (m, p) in mean.iter_mut().zip(softmax(z)) {
            *m += p / logits.len() as f64;
        }
    }
    mean
}

/// Cross-entropy counterpart of [`sample_objective`] for the baselines:
/// per-view softmax cross-entropy plus the cross-entropy of the averaged
/// probabilities. Returns gradients with respect to each view's logits.
pub fn probability_average_objective(logits: &[&[f64]], label: usize) -> (LossBreakdown, Vec<Vec<f64>>) {
    let views = logits.len() as f64;
    let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
    let mean_true: f64 = probs.iter().map(|p| p[label]).sum::<f64>() / views;
    let mut breakdown = LossBreakdown {
        fused: -mean_true.max(f64::MIN_POSITIVE).ln(),
        per_view: Vec::with_capacity(probs.len()),
        regularizer: 0.0,
    };
    let mut grads = Vec::with_capacity(probs.len());
    for p in &probs {
        breakdown.per_view.push(-p[label].max(f64::MIN_POSITIVE).ln());
        let scale = 1.0 / (views * mean_true);
        let g = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let onehot = if j == label { 1.0 } else { 0.0 };
                (pj - onehot) + scale * pj * (p[label] - onehot)
            })
            .collect();
        grads.push(g);
    }
    (breakdown, grads)
}
