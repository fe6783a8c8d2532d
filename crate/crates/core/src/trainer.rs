//! Training loop: impute once, then fit one evidence network per view.
//!
//! The training set is standardized, its missing slots are completed
//! according to the [`TrainMode`], and the networks are trained on minibatches
//! of flattened (sample, sampling) pairs. Evidential modes minimize the fused
//! loss plus every view's loss; the cross-entropy baselines average softmax
//! probabilities instead of fusing opinions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, MultiViewDataset, ZScoreStats};
use crate::error::{Error, Result};
use crate::evidential::{anneal_lambda, AnnealSchedule};
use crate::fusion::{probability_average_objective, sample_objective, LossBreakdown};
use crate::imputer::{observed_column_means, CompletionSet, CovarianceMode, Imputer, ImputerConfig, StreamKey};
use crate::network::{AdamConfig, EvidenceNetwork, Gradients, OptimizerState, OutputActivation};
use crate::rng::{self, tag};

pub const CONFIG_SCHEMA: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "evifuse-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Multiple sampled completions, evidential heads, Dempster fusion.
    Uimc,
    /// Neighbour-mean completion only, otherwise as `Uimc`.
    SingleImputation,
    /// Sampled completions, softmax cross-entropy, probability averaging.
    NaiveCe,
    /// Column-mean completion with the cross-entropy objective.
    MeanImputation,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] =
        [TrainMode::Uimc, TrainMode::SingleImputation, TrainMode::NaiveCe, TrainMode::MeanImputation];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Uimc => "uimc",
            TrainMode::SingleImputation => "single_imputation",
            TrainMode::NaiveCe => "naive_ce",
            TrainMode::MeanImputation => "mean_imputation",
        }
    }

    /// True when the heads emit evidence and views are fused by Dempster's rule.
    pub fn is_evidential(self) -> bool {
        matches!(self, TrainMode::Uimc | TrainMode::SingleImputation)
    }

    pub fn output_activation(self) -> OutputActivation {
        if self.is_evidential() {
            OutputActivation::Softplus
        } else {
            OutputActivation::Identity
        }
    }

    /// True when completions are drawn from the neighbour Gaussians.
    pub fn samples_completions(self) -> bool {
        matches!(self, TrainMode::Uimc | TrainMode::NaiveCe)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema: u32,
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Neighbours per observed view.
    pub k: usize,
    /// Completions drawn per incomplete training sample.
    pub n_samplings: usize,
    pub jitter: f64,
    /// Sample missing views from a diagonal rather than full covariance.
    pub diag_cov: bool,
    pub anneal: AnnealSchedule,
    /// Hidden layer widths shared by every view's network.
    pub hidden: Vec<usize>,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Keep the fused term in the loss but stop its gradient at the fusion.
    pub detach_fusion: bool,
    /// Stop after this many epochs without a 1e-4 relative improvement.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            mode: TrainMode::Uimc,
            epochs: 200,
            batch_size: 128,
            k: 10,
            n_samplings: 30,
            jitter: 1e-3,
            diag_cov: false,
            anneal: AnnealSchedule::default(),
            hidden: vec![128],
            optimizer: AdamConfig::default(),
            seed: 0,
            detach_fusion: false,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("config schema {} is not supported (expected {CONFIG_SCHEMA})", self.schema));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.n_samplings == 0 {
            return bad("n_samplings must be at least 1".into());
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter {} must be finite and nonnegative", self.jitter));
        }
        AnnealSchedule::new(self.anneal.final_value, self.anneal.decay_epochs)?;
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("optimizer needs learning_rate > 0 and betas in [0, 1)".into());
        }
        if !(o.epsilon > 0.0) || !(o.weight_decay >= 0.0) {
            return bad("optimizer needs epsilon > 0 and weight_decay >= 0".into());
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be at least 1".into());
        }
        Ok(())
    }

    pub fn covariance(&self) -> CovarianceMode {
        if self.diag_cov {
            CovarianceMode::Diagonal
        } else {
            CovarianceMode::Full
        }
    }

    pub fn imputer(&self) -> ImputerConfig {
        ImputerConfig { k: self.k, jitter: self.jitter, covariance: self.covariance() }
    }
}

/// Loss sums over every (sample, sampling) pair of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lambda: f64,
    pub total: f64,
    pub fused: f64,
    pub per_view: Vec<f64>,
    /// λ-weighted KL part of `total` (zero for cross-entropy modes).
    pub regularizer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub networks: Vec<EvidenceNetwork>,
    pub optimizers: Vec<OptimizerState>,
    pub normalization: ZScoreStats,
    pub config: TrainConfig,
    pub history: Vec<EpochLoss>,
    /// Standardized training set, the neighbour pool for test-time imputation.
    pub reference: MultiViewDataset,
    pub epochs_completed: usize,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<M> {
    format: String,
    version: u32,
    model: M,
}

impl TrainedModel {
    pub fn mode(&self) -> TrainMode {
        self.config.mode
    }

    pub fn n_views(&self) -> usize {
        self.networks.len()
    }

    pub fn class_count(&self) -> usize {
        self.reference.class_count()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.networks.iter().map(|n| n.input_dim()).collect()
    }

    /// Write a versioned JSON checkpoint atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let record = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: self };
        write_atomic(path, &serde_json::to_vec(&record)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let corrupt = |e: serde_json::Error| Error::Checkpoint(format!("{}: corrupt or truncated ({e})", path.display()));
        let header: Header = serde_json::from_slice(&bytes).map_err(corrupt)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("{}: not a model checkpoint", path.display())));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                header.version
            )));
        }
        let record: Checkpoint<TrainedModel> = serde_json::from_slice(&bytes).map_err(corrupt)?;
        record.model.check()?;
        Ok(record.model)
    }

    fn check(&self) -> Result<()> {
        let dims = self.reference.view_dims();
        if self.networks.len() != dims.len() || self.view_dims() != dims {
            return Err(Error::Checkpoint("network inputs do not match the stored training views".into()));
        }
        if self.networks.iter().any(|n| n.output_dim() != self.class_count()) {
            return Err(Error::Checkpoint("network outputs do not match the class count".into()));
        }
        Ok(())
    }
}

pub fn loss_history(model: &TrainedModel) -> &[EpochLoss] {
    &model.history
}

/// Training completions for `mode` on a standardized dataset.
pub fn training_completions(data: &MultiViewDataset, cfg: &TrainConfig) -> Result<CompletionSet> {
    match cfg.mode {
        TrainMode::Uimc | TrainMode::NaiveCe => Imputer::new(data, cfg.imputer())?
            .plan(data, true, StreamKey::Index)?
            .sample(cfg.n_samplings, rng::stream_seed(cfg.seed, &[tag::TRAIN])),
        TrainMode::SingleImputation => Ok(Imputer::new(data, cfg.imputer())?
            .plan(data, true, StreamKey::Index)?
            .means()),
        TrainMode::MeanImputation => {
            let means: Vec<_> = (0..data.n_views()).map(|v| observed_column_means(data, v)).collect();
            Ok(CompletionSet::fill(data, &means))
        }
    }
}

pub fn init_networks(data: &MultiViewDataset, cfg: &TrainConfig) -> Result<Vec<EvidenceNetwork>> {
    data.view_dims()
        .into_iter()
        .enumerate()
        .map(|(v, d)| {
            let mut sizes = vec![d];
            sizes.extend(&cfg.hidden);
            sizes.push(data.class_count());
            EvidenceNetwork::new(&sizes, cfg.mode.output_activation(), &mut rng::stream(cfg.seed, &[tag::INIT, v as u64]))
        })
        .collect()
}

/// Loss and output gradients of one pair given each view's network output.
pub fn pair_objective(
    mode: TrainMode,
    outputs: &[&[f64]],
    label: usize,
    lambda: f64,
    detach_fusion: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    if mode.is_evidential() {
        sample_objective(outputs, label, lambda, detach_fusion)
    } else {
        Ok(probability_average_objective(outputs, label))
    }
}

pub fn train(data: &MultiViewDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.n_samples() == 0 {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    let normalization = ZScoreStats::fit(data);
    let reference = normalization.transform(data).zero_unobserved();
    let completions = training_completions(&reference, cfg)?;
    let mut networks = init_networks(&reference, cfg)?;
    let mut optimizers: Vec<OptimizerState> =
        networks.iter().map(|n| OptimizerState::new(n, cfg.optimizer)).collect();

    let samplings = completions.effective_samplings();
    let mut pairs: Vec<(usize, usize)> = (0..reference.n_samples())
        .flat_map(|n| (0..samplings).map(move |s| (n, s)))
        .collect();
    let views = reference.n_views();
    let classes = reference.class_count();
    let labels = reference.labels();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let lambda = anneal_lambda(epoch, &cfg.anneal);
        pairs.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut sums = LossBreakdown { per_view: vec![0.0; views], ..Default::default() };

        for batch in pairs.chunks(cfg.batch_size) {
            let caches: Vec<_> = networks
                .par_iter()
                .enumerate()
                .map(|(v, net)| {
                    let mut x = Array2::zeros((batch.len(), net.input_dim()));
                    for (mut row, &(n, s)) in x.axis_iter_mut(Axis(0)).zip(batch) {
                        row.assign(&completions.row(n, v, s));
                    }
                    net.forward_batch(x.view())
                })
                .collect();
            let outputs: Vec<_> = caches.iter().map(|c| c.output()).collect();
            let rows = batch
                .par_iter()
                .enumerate()
                .map(|(i, &(n, s))| {
                    let evidence: Vec<&[f64]> =
                        outputs.iter().map(|o| o.row(i).to_slice().expect("standard layout")).collect();
                    pair_objective(cfg.mode, &evidence, labels[n], lambda, cfg.detach_fusion)
                        .map_err(|e| Error::Sample { sample: n, sampling: s, source: Box::new(e) })
                })
                .collect::<Result<Vec<_>>>()?;

            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Array2<f64>> = (0..views).map(|_| Array2::zeros((batch.len(), classes))).collect();
            for (i, (loss, g)) in rows.iter().enumerate() {
                sums.fused += loss.fused;
                sums.regularizer += loss.regularizer;
                for v in 0..views {
                    sums.per_view[v] += loss.per_view[v];
                    for (dst, src) in grads[v].row_mut(i).iter_mut().zip(&g[v]) {
                        *dst = src * scale;
                    }
                }
            }
            let updates: Vec<Gradients> = networks
                .par_iter()
                .zip(&caches)
                .zip(&grads)
                .map(|((net, cache), g)| net.backward_batch(cache, g.view()))
                .collect();
            for (v, ((net, opt), g)) in networks.iter_mut().zip(&mut optimizers).zip(&updates).enumerate() {
                opt.step(net, g).map_err(|e| match e {
                    Error::NonFiniteGradient { path } => Error::NonFiniteGradient { path: format!("view[{v}].{path}") },
                    other => other,
                })?;
            }
        }

        let total = sums.total();
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(EpochLoss {
            epoch,
            lambda,
            total,
            fused: sums.fused,
            per_view: sums.per_view,
            regularizer: sums.regularizer,
        });
        if let Some(patience) = cfg.early_stop_patience {
            if total < best * (1.0 - 1e-4) {
                best = total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }

    let epochs_completed = history.len();
    Ok(TrainedModel {
        networks,
        optimizers,
        normalization,
        config: cfg.clone(),
        history,
        reference,
        epochs_completed,
    })
}
