//! Test-time completion, fusion and voting.
//!
//! Missing test views are imputed from label-free neighbours in the model's
//! training set. Each of the N_s completions yields one fused opinion and one
//! label; the final label is the most frequent of these.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::evidential::{dirichlet_to_opinion, evidence_to_dirichlet, SubjectiveOpinion};
use crate::fusion::{average_probabilities, ds_fold};
use crate::imputer::{CompletionSet, CovarianceMode, ImputationPlan, Imputer, ImputerConfig, StreamKey};
use crate::rng::{self, tag};
use crate::trainer::{TrainConfig, TrainMode, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub k: usize,
    pub n_samplings: usize,
    pub jitter: f64,
    pub diag_cov: bool,
    pub seed: u64,
}

impl PredictConfig {
    /// Test-time settings equal to the training ones.
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self { k: cfg.k, n_samplings: cfg.n_samplings, jitter: cfg.jitter, diag_cov: cfg.diag_cov, seed: cfg.seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samplings == 0 {
            return Err(Error::InvalidConfig("n_samplings must be at least 1".into()));
        }
        Ok(())
    }

    fn imputer(&self) -> ImputerConfig {
        let covariance = if self.diag_cov { CovarianceMode::Diagonal } else { CovarianceMode::Full };
        ImputerConfig { k: self.k, jitter: self.jitter, covariance }
    }
}

/// Prediction for one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub label: usize,
    /// Per-class count of per-completion labels.
    pub votes: Vec<usize>,
    /// Mean of the fused opinions of the included completions.
    pub mean_opinion: SubjectiveOpinion,
    /// Fused opinion per completion; `None` where fusion failed.
    pub per_sampling: Vec<Option<SubjectiveOpinion>>,
    /// Completions left out of the vote because fusion failed.
    pub excluded: usize,
    /// Mean fused u, or mean 1 − max p̄ for the cross-entropy modes.
    pub uncertainty: f64,
}

/// Most frequent label; ties go to the larger summed belief, then the lower
/// class index. `None` for an empty slice.
pub fn vote(opinions: &[SubjectiveOpinion]) -> Option<(usize, Vec<usize>)> {
    let k = opinions.first()?.class_count();
    let mut counts = vec![0usize; k];
    let mut belief = vec![0.0; k];
    for o in opinions {
        counts[o.argmax()] += 1;
        for (acc, b) in belief.iter_mut().zip(o.beliefs()) {
            *acc += b;
        }
    }
    let top = *counts.iter().max().expect("k > 0");
    let mut label = None;
    for c in (0..k).filter(|&c| counts[c] == top) {
        match label {
            Some(best) if belief[c] <= belief[best] => {}
            _ => label = Some(c),
        }
    }
    label.map(|l| (l, counts))
}

/// Fused opinion and its uncertainty score from one output per view.
pub fn fuse_outputs(mode: TrainMode, outputs: &[&[f64]]) -> Result<(SubjectiveOpinion, f64)> {
    if mode.is_evidential() {
        let opinions = outputs
            .iter()
            .map(|e| evidence_to_dirichlet(e).map(|d| dirichlet_to_opinion(&d)))
            .collect::<Result<Vec<_>>>()?;
        let fused = ds_fold(&opinions)?;
        let u = fused.uncertainty();
        Ok((fused, u))
    } else {
        let p = average_probabilities(outputs);
        let top = p.iter().cloned().fold(0.0, f64::max);
        Ok((SubjectiveOpinion::from_parts(p, 0.0), 1.0 - top))
    }
}

fn check_compatible(model: &TrainedModel, data: &MultiViewDataset) -> Result<()> {
    if data.view_dims() != model.view_dims() {
        return Err(Error::InvalidDataset(format!(
            "view dims {:?} do not match the model's {:?}",
            data.view_dims(),
            model.view_dims()
        )));
    }
    if data.class_count() > model.class_count() {
        return Err(Error::InvalidDataset(format!(
            "{} classes but the model has {}",
            data.class_count(),
            model.class_count()
        )));
    }
    Ok(())
}

/// Standardize `data` and build its label-free imputation plan.
pub fn test_plan(model: &TrainedModel, data: &MultiViewDataset, cfg: &PredictConfig) -> Result<ImputationPlan> {
    cfg.validate()?;
    check_compatible(model, data)?;
    let standardized = model.normalization.transform(data).zero_unobserved();
    Imputer::new(&model.reference, cfg.imputer())?.plan(&standardized, false, StreamKey::Content)
}

fn network_outputs(model: &TrainedModel, completions: &CompletionSet, n_samplings: usize) -> Vec<Vec<Array2<f64>>> {
    (0..n_samplings)
        .into_par_iter()
        .map(|s| {
            let s = s.min(completions.n_samplings() - 1);
            completions
                .completion(s)
                .iter()
                .zip(&model.networks)
                .map(|(x, net)| net.forward_batch(x.view()).output().to_owned())
                .collect()
        })
        .collect()
}

fn predict_row(mode: TrainMode, outputs: &[Vec<Array2<f64>>], n: usize) -> Result<SamplePrediction> {
    let mut per_sampling = Vec::with_capacity(outputs.len());
    let mut included = Vec::new();
    let mut uncertainty = 0.0;
    let mut last_error = None;
    for (s, views) in outputs.iter().enumerate() {
        let rows: Vec<_> = views.iter().map(|o| o.row(n)).collect();
        let slices: Vec<&[f64]> = rows.iter().map(|r| r.to_slice().expect("standard layout")).collect();
        match fuse_outputs(mode, &slices) {
            Ok((opinion, u)) => {
                uncertainty += u;
                included.push(opinion.clone());
                per_sampling.push(Some(opinion));
            }
            Err(e) => {
                last_error = Some((s, e));
                per_sampling.push(None);
            }
        }
    }
    let Some((label, votes)) = vote(&included) else {
        let (sampling, e) = last_error.expect("no sampling succeeded");
        return Err(Error::Sample { sample: n, sampling, source: Box::new(e) });
    };
    let m = included.len() as f64;
    let k = included[0].class_count();
    let mut beliefs = vec![0.0; k];
    let mut u = 0.0;
    for o in &included {
        for (acc, b) in beliefs.iter_mut().zip(o.beliefs()) {
            *acc += b / m;
        }
        u += o.uncertainty() / m;
    }
    Ok(SamplePrediction {
        label,
        votes,
        mean_opinion: SubjectiveOpinion::from_parts(beliefs, u),
        excluded: outputs.len() - included.len(),
        per_sampling,
        uncertainty: uncertainty / m,
    })
}

/// Predictions for every row of a completion set over standardized data.
pub fn predict_completions(
    model: &TrainedModel,
    completions: &CompletionSet,
    n_samplings: usize,
) -> Result<Vec<SamplePrediction>> {
    let outputs = network_outputs(model, completions, n_samplings);
    (0..completions.base().n_samples())
        .into_par_iter()
        .map(|n| predict_row(model.mode(), &outputs, n))
        .collect()
}

fn sample_plan(plan: &ImputationPlan, cfg: &PredictConfig, keys: &[u64]) -> Result<CompletionSet> {
    plan.sample(cfg.n_samplings, rng::stream_seed(cfg.seed, keys))
}

/// Predict every sample of a raw (unstandardized) dataset.
pub fn predict(model: &TrainedModel, data: &MultiViewDataset, cfg: &PredictConfig) -> Result<Vec<SamplePrediction>> {
    let plan = test_plan(model, data, cfg)?;
    predict_completions(model, &sample_plan(&plan, cfg, &[tag::EVAL])?, cfg.n_samplings)
}

/// Predict one row of `data`. Equals the corresponding entry of [`predict`].
pub fn predict_sample(
    model: &TrainedModel,
    data: &MultiViewDataset,
    index: usize,
    cfg: &PredictConfig,
) -> Result<SamplePrediction> {
    if index >= data.n_samples() {
        return Err(Error::InvalidDataset(format!("sample {index} out of range")));
    }
    let mut p = predict(model, &data.select(&[index]), cfg)?;
    Ok(p.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_samples: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_uncertainty: f64,
    pub mean_uncertainty_correct: Option<f64>,
    pub mean_uncertainty_incorrect: Option<f64>,
    pub excluded_samplings: usize,
    pub predictions: Vec<SamplePrediction>,
}

pub fn metrics(labels: &[usize], class_count: usize, predictions: Vec<SamplePrediction>) -> EvalMetrics {
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mut hits = vec![(0usize, 0usize); class_count];
    let (mut right, mut wrong) = (Vec::new(), Vec::new());
    for (p, &y) in predictions.iter().zip(labels) {
        hits[y].1 += 1;
        if p.label == y {
            hits[y].0 += 1;
            right.push(p.uncertainty);
        } else {
            wrong.push(p.uncertainty);
        }
    }
    let all: Vec<f64> = predictions.iter().map(|p| p.uncertainty).collect();
    EvalMetrics {
        n_samples: predictions.len(),
        accuracy: right.len() as f64 / predictions.len().max(1) as f64,
        per_class_accuracy: hits.iter().map(|&(h, t)| (t > 0).then(|| h as f64 / t as f64)).collect(),
        mean_uncertainty: mean(&all).unwrap_or(0.0),
        mean_uncertainty_correct: mean(&right),
        mean_uncertainty_incorrect: mean(&wrong),
        excluded_samplings: predictions.iter().map(|p| p.excluded).sum(),
        predictions,
    }
}

pub fn evaluate(model: &TrainedModel, data: &MultiViewDataset, cfg: &PredictConfig) -> Result<EvalMetrics> {
    let predictions = predict(model, data, cfg)?;
    Ok(metrics(data.labels(), model.class_count(), predictions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConsistency {
    pub class: usize,
    pub consistent: usize,
    pub inconsistent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub repeats: usize,
    pub consistent_fraction: f64,
    pub inconsistent_fraction: f64,
    /// Consistent/inconsistent counts grouped by true class.
    pub per_class: Vec<ClassConsistency>,
    /// True where all repeats gave the same final label.
    pub per_sample_flags: Vec<bool>,
}

/// Repeat prediction `repeats` times with the mask fixed, reseeding only the
/// completion draws, and report which samples keep their label.
pub fn stability_experiment(
    model: &TrainedModel,
    data: &MultiViewDataset,
    repeats: usize,
    cfg: &PredictConfig,
) -> Result<StabilityReport> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("at least one repeat is required".into()));
    }
    let plan = test_plan(model, data, cfg)?;
    let mut first: Vec<usize> = Vec::new();
    let mut flags = vec![true; data.n_samples()];
    for r in 0..repeats {
        let completions = sample_plan(&plan, cfg, &[tag::STABILITY, r as u64])?;
        let labels: Vec<usize> = predict_completions(model, &completions, cfg.n_samplings)?
            .into_iter()
            .map(|p| p.label)
            .collect();
        if r == 0 {
            first = labels;
        } else {
            for ((flag, a), b) in flags.iter_mut().zip(&first).zip(&labels) {
                *flag &= a == b;
            }
        }
    }
    let mut per_class: Vec<ClassConsistency> = (0..model.class_count())
        .map(|class| ClassConsistency { class, consistent: 0, inconsistent: 0 })
        .collect();
    for (&flag, &y) in flags.iter().zip(data.labels()) {
        if flag {
            per_class[y].consistent += 1;
        } else {
            per_class[y].inconsistent += 1;
        }
    }
    let consistent = flags.iter().filter(|&&f| f).count() as f64 / flags.len().max(1) as f64;
    Ok(StabilityReport {
        repeats,
        consistent_fraction: consistent,
        inconsistent_fraction: 1.0 - consistent,
        per_class,
        per_sample_flags: flags,
    })
}

/// Standardized completions of a test set, for export or inspection.
pub fn test_completions(model: &TrainedModel, data: &MultiViewDataset, cfg: &PredictConfig) -> Result<CompletionSet> {
    let plan = test_plan(model, data, cfg)?;
    sample_plan(&plan, cfg, &[tag::EVAL])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::train;

    fn op(b: &[f64], u: f64) -> SubjectiveOpinion {
        SubjectiveOpinion::new(b.to_vec(), u).unwrap()
    }

    #[test]
    fn majority_wins() {
        let ops = [op(&[0.1, 0.8, 0.0], 0.1), op(&[0.1, 0.7, 0.1], 0.1), op(&[0.0, 0.1, 0.8], 0.1)];
        let (label, votes) = vote(&ops).unwrap();
        assert_eq!(label, 1);
        assert_eq!(votes, vec![0, 2, 1]);
    }

    #[test]
    fn ties_go_to_larger_summed_belief_then_lower_index() {
        let mut ops = Vec::new();
        for _ in 0..5 {
            ops.push(op(&[0.9, 0.05], 0.05));
            ops.push(op(&[0.3, 0.5], 0.2));
        }
        assert_eq!(vote(&ops).unwrap().0, 0);

        let mut ops = Vec::new();
        for _ in 0..5 {
            ops.push(op(&[0.5, 0.3], 0.2));
            ops.push(op(&[0.05, 0.9], 0.05));
        }
        assert_eq!(vote(&ops).unwrap().0, 1);

        let ops = [op(&[0.6, 0.2], 0.2), op(&[0.2, 0.6], 0.2)];
        assert_eq!(vote(&ops).unwrap().0, 0);
        assert!(vote(&[]).is_none());
    }

    #[test]
    fn cross_entropy_uncertainty_is_one_minus_top_probability() {
        let (o, u) = fuse_outputs(TrainMode::NaiveCe, &[&[0.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(o.beliefs(), &[0.5, 0.5]);
        assert!((u - 0.5).abs() < 1e-15);
    }

    fn model() -> (TrainedModel, MultiViewDataset) {
        let n = 16;
        let a = Array2::from_shape_fn((n, 2), |(i, j)| (i % 2) as f64 * 3.0 + ((i + j) % 3) as f64 * 0.2);
        let b = Array2::from_shape_fn((n, 2), |(i, j)| (i % 2) as f64 * -2.0 + ((i * j) % 4) as f64 * 0.1);
        let mut mask = Array2::from_elem((n, 2), true);
        mask[[3, 1]] = false;
        mask[[6, 0]] = false;
        mask[[11, 1]] = false;
        let data = MultiViewDataset::new(vec![a, b], (0..n).map(|i| i % 2).collect(), Some(mask)).unwrap();
        let cfg = TrainConfig { epochs: 20, batch_size: 8, k: 3, n_samplings: 4, hidden: vec![6], ..Default::default() };
        (train(&data, &cfg).unwrap(), data)
    }

    #[test]
    fn complete_samples_vote_unanimously() {
        let (m, data) = model();
        let cfg = PredictConfig { n_samplings: 7, ..PredictConfig::from_train(&m.config) };
        let preds = predict(&m, &data, &cfg).unwrap();
        for (n, p) in preds.iter().enumerate() {
            assert_eq!(p.votes.iter().sum::<usize>() + p.excluded, 7);
            assert!(p.votes[p.label] > 0);
            if data.is_complete(n) {
                assert_eq!(p.votes[p.label], 7);
            }
        }
    }

    #[test]
    fn single_sampling_label_is_the_fused_argmax() {
        let (m, data) = model();
        let cfg = PredictConfig { n_samplings: 1, ..PredictConfig::from_train(&m.config) };
        for p in predict(&m, &data, &cfg).unwrap() {
            assert_eq!(p.label, p.per_sampling[0].as_ref().unwrap().argmax());
        }
    }

    #[test]
    fn predict_sample_matches_batch_prediction() {
        let (m, data) = model();
        let cfg = PredictConfig::from_train(&m.config);
        let all = predict(&m, &data, &cfg).unwrap();
        for n in [0, 3, 6] {
            assert_eq!(predict_sample(&m, &data, n, &cfg).unwrap(), all[n]);
        }
    }

    #[test]
    fn stability_with_one_repeat_is_total() {
        let (m, data) = model();
        let cfg = PredictConfig::from_train(&m.config);
        let r = stability_experiment(&m, &data, 1, &cfg).unwrap();
        assert_eq!(r.consistent_fraction, 1.0);
        let total: usize = r.per_class.iter().map(|c| c.consistent + c.inconsistent).sum();
        assert_eq!(total, data.n_samples());
    }

    #[test]
    fn metrics_split_uncertainty_by_correctness() {
        let p = |label, uncertainty| SamplePrediction {
            label,
            votes: vec![1, 0],
            mean_opinion: SubjectiveOpinion::vacuous(2),
            per_sampling: vec![],
            excluded: 0,
            uncertainty,
        };
        let m = metrics(&[0, 1, 1], 3, vec![p(0, 0.1), p(1, 0.3), p(0, 0.8)]);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class_accuracy, vec![Some(1.0), Some(0.5), None]);
        assert!((m.mean_uncertainty_correct.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(m.mean_uncertainty_incorrect, Some(0.8));
    }
}
