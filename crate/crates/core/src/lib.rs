//! Incomplete multi-view classification with sampled imputations and
//! evidential fusion.
//!
//! The pipeline has two stages. Missing views are characterized by a
//! Gaussian fitted to the missing view of label-conditioned nearest
//! neighbours ([`imputer`]) and sampled several times. Each completed
//! instance is then classified by per-view evidential networks
//! ([`network`], [`evidential`]) whose subjective opinions are combined with
//! Dempster's rule ([`fusion`]). Training ([`trainer`]) optimizes the fused and
//! per-view evidential losses jointly; prediction ([`predictor`]) votes over
//! the per-completion labels.

pub mod dataset;
pub mod error;
pub mod evidential;
pub mod experiment;
pub mod fusion;
pub mod imputer;
pub mod network;
pub mod predictor;
pub mod rng;
pub mod special;
pub mod trainer;

pub use dataset::{MissingnessSpec, MultiViewDataset, SplitSpec, ZScoreStats};
pub use error::{Error, Result};
pub use evidential::{AnnealSchedule, DirichletParams, SubjectiveOpinion};
pub use imputer::{CompletionSet, CovarianceMode, GaussianImputation};



pub use network::{EvidenceNetwork, OptimizerState};
pub use trainer::{TrainConfig, TrainMode, TrainedModel};
pub use predictor::{EvalMetrics, PredictConfig, SamplePrediction, StabilityReport};
