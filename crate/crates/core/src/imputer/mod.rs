//! Distribution-based imputation of missing views.
//!
//! For a sample whose view m is missing, every observed view v ≠ m proposes
//! its k nearest neighbours (squared Euclidean distance in view v) among
//! reference samples that observe both v and m (at training time they must also
//! share the sample's label). The union of these neighbour sets gives the
//! rows of view m whose mean and unbiased covariance define a Gaussian; each
//! completion draws the missing view from it.
//!
//! Neighbour search only ever looks at a sample's genuinely observed views,
//! so samples missing several views are imputed view by view independently.
//! Test-time queries search the training set without labels.

mod gaussian;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::rng;

pub use gaussian::{CovarianceMode, GaussianImputation, GaussianSampler, MAX_JITTER};

/// −‖x − c‖² for every candidate row.
pub fn distance_set<'a>(
    x: ArrayView1<f64>,
    candidates: impl IntoIterator<Item = ArrayView1<'a, f64>>,
) -> Vec<f64> {
    candidates
        .into_iter()
        .map(|c| {
            -x.iter()
                .zip(c.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .collect()
}

/// Positions of the k largest negated distances (the k nearest candidates).
/// Ties go to the lower position; fewer than k candidates returns them all.
pub fn topk_indicator(distances: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborQuery {
    pub sample_index: usize,
    pub missing_view: usize,
    /// Neighbours per available view.
    pub k: usize,
    /// Restrict candidates to the sample's class (training time).
    pub use_labels: bool,
}

/// Reference rows eligible as neighbours through `view` for a sample missing
/// `missing_view`.
fn candidates(
    reference: &MultiViewDataset,
    view: usize,
    missing_view: usize,
    label: Option<usize>,
) -> Vec<usize> {
    (0..reference.n_samples())
        .filter(|&i| {
            reference.is_observed(i, view)
                && reference.is_observed(i, missing_view)
                && label.is_none_or(|y| reference.labels()[i] == y)
        })
        .collect()
}

/// Union over the query sample's observed views of the per-view top-k sets,
/// as sorted reference indices. Empty when no candidate qualifies.
fn neighbors_from(
    reference: &MultiViewDataset,
    query: &MultiViewDataset,
    sample: usize,
    missing_view: usize,
    k: usize,
    label: Option<usize>,
) -> Vec<usize> {
    let mut union = BTreeSet::new();
    for v in query.observed_views(sample).filter(|&v| v != missing_view) {
        let pool = candidates(reference, v, missing_view, label);
        let distances = distance_set(query.row(sample, v), pool.iter().map(|&i| reference.row(i, v)));
        union.extend(topk_indicator(&distances, k).into_iter().map(|p| pool[p]));
    }
    union.into_iter().collect()
}

/// Neighbour set 𝕀 for a sample of `data`, searched within `data` itself.
/// `None` signals that no eligible candidate exists.
pub fn neighbor_union(query: &NeighborQuery, data: &MultiViewDataset) -> Result<Option<Vec<usize>>> {
    if query.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if query.sample_index >= data.n_samples() || query.missing_view >= data.n_views() {
        return Err(Error::InvalidConfig(format!(
            "query ({}, {}) is outside the dataset",
            query.sample_index, query.missing_view
        )));
    }
    if data.is_observed(query.sample_index, query.missing_view) {
        return Err(Error::InvalidConfig(format!(
            "view {} of sample {} is not missing",
            query.missing_view, query.sample_index
        )));
    }
    let label = query.use_labels.then(|| data.labels()[query.sample_index]);
    let found = neighbors_from(data, data, query.sample_index, query.missing_view, query.k, label);
    Ok((!found.is_empty()).then_some(found))
}

pub fn estimate_gaussian(neighbors: ndarray::ArrayView2<f64>, jitter: f64) -> Result<GaussianImputation> {
    GaussianImputation::estimate(neighbors, jitter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputerConfig {
    pub k: usize,
    pub jitter: f64,
    pub covariance: CovarianceMode,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self { k: 10, jitter: 1e-3, covariance: CovarianceMode::Full }
    }
}

/// How a slot's random stream is keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKey {
    /// By row index; used for the training set.
    Index,
    /// By the sample's observed values, so results do not depend on row order.
    Content,
}

/// How the Gaussian of a slot was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSource {
    /// Neighbours found under the requested predicate.
    Neighbors,
    /// Label filter dropped because no same-class candidate exists.
    Unconditioned,
    /// No candidate at all: column means of the reference view.
    ColumnMean,
}

#[derive(Debug, Clone)]
struct Slot {
    sample: usize,
    view: usize,
    key: u64,
    source: NeighborSource,
    gaussian: GaussianImputation,
    sampler: GaussianSampler,
}

/// Mean of the observed reference rows of `view` (zeros if there are none).
pub fn observed_column_means(reference: &MultiViewDataset, view: usize) -> Array1<f64> {
    let rows: Vec<usize> = (0..reference.n_samples())
        .filter(|&i| reference.is_observed(i, view))
        .collect();
    if rows.is_empty() {
        return Array1::zeros(reference.view(view).ncols());
    }
    reference.view(view).select(Axis(0), &rows).mean_axis(Axis(0)).expect("non-empty")
}

/// Builds per-slot Gaussians for a query set against a reference set.
pub struct Imputer<'a> {
    reference: &'a MultiViewDataset,
    config: ImputerConfig,
}

impl<'a> Imputer<'a> {
    pub fn new(reference: &'a MultiViewDataset, config: ImputerConfig) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(config.jitter >= 0.0) {
            return Err(Error::InvalidConfig(format!("jitter {} is negative", config.jitter)));
        }
        Ok(Self { reference, config })
    }

    fn gaussian_for(
        &self,
        query: &MultiViewDataset,
        sample: usize,
        view: usize,
        use_labels: bool,
    ) -> Result<(NeighborSource, GaussianImputation)> {
        let k = self.config.k;
        let reference = self.reference;
        let mut source = NeighborSource::Neighbors;
        let mut found = if use_labels {
            neighbors_from(reference, query, sample, view, k, Some(query.labels()[sample]))
        } else {
            Vec::new()
        };
        if found.is_empty() {
            if use_labels {
                source = NeighborSource::Unconditioned;
            }
            found = neighbors_from(reference, query, sample, view, k, None);
        }
        if found.is_empty() {
            let mu = observed_column_means(reference, view);
            return Ok((NeighborSource::ColumnMean, GaussianImputation::point_mass(mu, self.config.jitter)));
        }
        let rows = reference.view(view).select(Axis(0), &found);
        Ok((source, GaussianImputation::estimate(rows.view(), self.config.jitter)?))
    }

    /// Gaussians for every missing slot of `query`.
    pub fn plan(&self, query: &MultiViewDataset, use_labels: bool, keying: StreamKey) -> Result<ImputationPlan> {
        if query.view_dims() != self.reference.view_dims() {
            return Err(Error::InvalidDataset(format!(
                "query view dims {:?} differ from reference {:?}",
                query.view_dims(),
                self.reference.view_dims()
            )));
        }
        let work: Vec<(usize, usize)> = (0..query.n_samples())
            .flat_map(|n| query.missing_views(n).map(move |v| (n, v)))
            .collect();
        let slots = work
            .into_par_iter()
            .map(|(sample, view)| {
                let wrap = |e: Error| Error::Imputation { sample, view, source: Box::new(e) };
                let (source, gaussian) = self.gaussian_for(query, sample, view, use_labels).map_err(wrap)?;
                let sampler = gaussian.sampler(self.config.covariance).map_err(wrap)?;
                let key = match keying {
                    StreamKey::Index => sample as u64,
                    StreamKey::Content => content_key(query, sample),
                };
                Ok(Slot { sample, view, key, source, gaussian, sampler })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImputationPlan { data: query.clone(), slots })
    }
}

fn content_key(data: &MultiViewDataset, sample: usize) -> u64 {
    let mut h = data.mask().row(sample).iter().fold(0u64, |acc, &m| acc << 1 | m as u64);
    for v in data.observed_views(sample) {
        h = rng::stream_seed(h, &[rng::hash_values(data.row(sample, v).iter())]);
    }
    h
}

/// Gaussians for the missing slots of one dataset, ready to be sampled.
#[derive(Debug, Clone)]
pub struct ImputationPlan {
    data: MultiViewDataset,
    slots: Vec<Slot>,
}

impl ImputationPlan {
    pub fn data(&self) -> &MultiViewDataset {
        &self.data
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Gaussian and neighbour source for a missing (sample, view).
    pub fn gaussian(&self, sample: usize, view: usize) -> Option<(&GaussianImputation, NeighborSource)> {
        self.slots
            .iter()
            .find(|s| s.sample == sample && s.view == view)
            .map(|s| (&s.gaussian, s.source))
    }

    pub fn fallback_count(&self) -> usize {
        self.slots.iter().filter(|s| s.source != NeighborSource::Neighbors).count()
    }

    /// Draw `n_samplings` completions. Each slot has its own stream keyed on
    /// (seed, sample key, view).
    pub fn sample(&self, n_samplings: usize, seed: u64) -> Result<CompletionSet> {
        if n_samplings == 0 {
            return Err(Error::InvalidConfig("at least one sampling is required".into()));
        }
        let imputed = self
            .slots
            .par_iter()
            .map(|slot| {
                let mut rng = rng::stream(seed, &[rng::tag::IMPUTE, slot.key, slot.view as u64]);
                let d = slot.gaussian.dim();
                let mut draws = Array2::zeros((n_samplings, d));
                for mut row in draws.rows_mut() {
                    row.assign(&slot.sampler.draw(&mut rng));
                }
                ((slot.sample, slot.view), draws)
            })
            .collect::<BTreeMap<_, _>>();
        Ok(CompletionSet { data: self.data.clone(), n_samplings, imputed })
    }

    /// A single completion filling every slot with its Gaussian mean.
    pub fn means(&self) -> CompletionSet {
        let imputed = self
            .slots
            .iter()
            .map(|s| ((s.sample, s.view), s.gaussian.mu.clone().insert_axis(Axis(0))))
            .collect();
        CompletionSet { data: self.data.clone(), n_samplings: 1, imputed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Observed,
    Imputed,
}

/// A dataset together with `n_samplings` draws for each of its missing slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionSet {
    data: MultiViewDataset,
    n_samplings: usize,
    imputed: BTreeMap<(usize, usize), Array2<f64>>,
}

impl CompletionSet {
    /// Fill every missing slot of `data` with a fixed vector per view.
    pub fn fill(data: &MultiViewDataset, per_view: &[Array1<f64>]) -> Self {
        let imputed = (0..data.n_samples())
            .flat_map(|n| data.missing_views(n).map(move |v| (n, v)))
            .map(|(n, v)| ((n, v), per_view[v].clone().insert_axis(Axis(0))))
            .collect();
        Self { data: data.clone(), n_samplings: 1, imputed }
    }

    pub fn base(&self) -> &MultiViewDataset {
        &self.data
    }

    pub fn n_samplings(&self) -> usize {
        self.n_samplings
    }

    /// Number of distinct completions: 1 when nothing was imputed.
    pub fn effective_samplings(&self) -> usize {
        if self.imputed.is_empty() {
            1
        } else {
            self.n_samplings
        }
    }

    pub fn imputed_slots(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.imputed.keys().copied()
    }

    pub fn provenance(&self, sample: usize, view: usize) -> Provenance {
        if self.imputed.contains_key(&(sample, view)) {
            Provenance::Imputed
        } else {
            Provenance::Observed
        }
    }

    /// Row of `view` for `sample` in completion `sampling`.
    pub fn row(&self, sample: usize, view: usize, sampling: usize) -> ArrayView1<'_, f64> {
        match self.imputed.get(&(sample, view)) {
            Some(draws) => draws.row(sampling),
            None => self.data.row(sample, view),
        }
    }

    /// Full per-view feature matrices of completion `sampling`.
    pub fn completion(&self, sampling: usize) -> Vec<Array2<f64>> {
        let mut views: Vec<Array2<f64>> = self.data.views().to_vec();
        for (&(n, v), draws) in &self.imputed {
            views[v].row_mut(n).assign(&draws.row(sampling));
        }
        views
    }
}

/// Training-time completions: label-conditioned neighbours within `data`,
/// full covariance, `n_samplings` draws per missing slot.
pub fn sample_completions(
    data: &MultiViewDataset,
    k: usize,
    n_samplings: usize,
    jitter: f64,
    seed: u64,
) -> Result<CompletionSet> {
    let config = ImputerConfig { k, jitter, covariance: CovarianceMode::Full };
    Imputer::new(data, config)?
        .plan(data, true, StreamKey::Index)?
        .sample(n_samplings, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn distances_are_negated_squares() {
        let x = array![0.0, 0.0];
        let c = array![[3.0, 4.0], [0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
        assert_eq!(distance_set(x.view(), c.rows()), vec![-25.0, 0.0, -1.0, -4.0]);
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_indicator(&[-1.0, -4.0, -9.0], 2), vec![0, 1]);
        assert_eq!(topk_indicator(&[-1.0, -4.0, -9.0], 10).len(), 3);
        assert_eq!(topk_indicator(&[-4.0, -4.0], 1), vec![0]);
        assert!(topk_indicator(&[], 3).is_empty());
    }

    /// Two views; view 1 of sample 0 missing. Labels alternate.
    fn small() -> MultiViewDataset {
        let v0 = array![[0.0], [0.1], [5.0], [0.2], [9.0], [0.3]];
        let v1 = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0]];
        let mask = array![[true, false], [true, true], [true, true], [true, true], [true, true], [true, true]];
        MultiViewDataset::new(vec![v0, v1], vec![0, 1, 0, 1, 0, 0], Some(mask)).unwrap()
    }

    #[test]
    fn label_filter_restricts_candidates() {
        let d = small();
        let q = NeighborQuery { sample_index: 0, missing_view: 1, k: 2, use_labels: true };
        assert_eq!(neighbor_union(&q, &d).unwrap(), Some(vec![2, 5]));
        let q = NeighborQuery { use_labels: false, ..q };
        assert_eq!(neighbor_union(&q, &d).unwrap(), Some(vec![1, 3]));
    }

    #[test]
    fn union_across_views_collapses_duplicates() {
        let v0 = array![[0.0], [0.0], [1.0], [1.0], [9.0]];
        let v1 = array![[0.0], [9.0], [0.0], [1.0], [9.0]];
        let v2 = array![[0.0], [1.0], [2.0], [3.0], [4.0]];
        let mask = array![
            [true, true, false],
            [true, true, true],
            [true, true, true],
            [true, true, true],
            [true, true, true]
        ];
        let d = MultiViewDataset::new(vec![v0, v1, v2], vec![0; 5], Some(mask)).unwrap();
        let q = NeighborQuery { sample_index: 0, missing_view: 2, k: 2, use_labels: true };
        // view 0 proposes {1, 2}, view 1 proposes {2, 3}
        assert_eq!(neighbor_union(&q, &d).unwrap(), Some(vec![1, 2, 3]));
    }

    #[test]
    fn no_eligible_candidate_signals_fallback() {
        let v0 = array![[0.0], [1.0]];
        let v1 = array![[0.0], [1.0]];
        let mask = array![[true, false], [true, true]];
        let d = MultiViewDataset::new(vec![v0, v1], vec![0, 1], Some(mask)).unwrap();
        let q = NeighborQuery { sample_index: 0, missing_view: 1, k: 3, use_labels: true };
        assert_eq!(neighbor_union(&q, &d).unwrap(), None);
        // the imputer falls back to the unconditioned pool
        let plan = Imputer::new(&d, ImputerConfig::default()).unwrap().plan(&d, true, StreamKey::Index).unwrap();
        let (g, source) = plan.gaussian(0, 1).unwrap();
        assert_eq!(source, NeighborSource::Unconditioned);
        assert_eq!(g.mu, array![1.0]);
    }

    #[test]
    fn query_must_target_a_missing_view() {
        let q = NeighborQuery { sample_index: 1, missing_view: 1, k: 2, use_labels: true };
        assert!(neighbor_union(&q, &small()).is_err());
    }

    #[test]
    fn column_mean_fallback_when_pool_is_empty() {
        // Nobody observes views 0 and 1 together.
        let v0 = array![[1.0], [2.0], [3.0]];
        let v1 = array![[0.0], [4.0], [6.0]];
        let mask = array![[true, false], [false, true], [false, true]];
        let d = MultiViewDataset::new(vec![v0, v1], vec![0, 0, 0], Some(mask)).unwrap();
        let plan = Imputer::new(&d, ImputerConfig::default()).unwrap().plan(&d, true, StreamKey::Index).unwrap();
        let (g, source) = plan.gaussian(0, 1).unwrap();
        assert_eq!(source, NeighborSource::ColumnMean);
        assert_eq!(g.mu, array![5.0]);
        assert_eq!(g.covariance(), array![[1e-3]]);
        assert_eq!(plan.fallback_count(), 3);
    }

    #[test]
    fn complete_data_needs_no_imputation() {
        let d = small().with_mask(Array2::from_elem((6, 2), true)).unwrap();
        let c = sample_completions(&d, 3, 5, 1e-3, 0).unwrap();
        assert_eq!(c.effective_samplings(), 1);
        for s in 0..5 {
            assert_eq!(c.completion(s), d.views().to_vec());
        }
    }

    #[test]
    fn observed_entries_survive_every_completion() {
        let d = small();
        let c = sample_completions(&d, 2, 4, 1e-3, 7).unwrap();
        assert_eq!(c.provenance(0, 1), Provenance::Imputed);
        assert_eq!(c.provenance(0, 0), Provenance::Observed);
        for s in 0..4 {
            let views = c.completion(s);
            for n in 0..d.n_samples() {
                for v in d.observed_views(n) {
                    assert_eq!(views[v].row(n), d.row(n, v));
                }
            }
        }
        assert_eq!(c, sample_completions(&d, 2, 4, 1e-3, 7).unwrap());
        assert_ne!(c, sample_completions(&d, 2, 4, 1e-3, 8).unwrap());
    }

    #[test]
    fn means_use_the_neighbor_average() {
        let d = small();
        let plan = Imputer::new(&d, ImputerConfig { k: 2, ..Default::default() })
            .unwrap()
            .plan(&d, true, StreamKey::Index)
            .unwrap();
        let c = plan.means();
        assert_eq!(c.row(0, 1, 0), array![3.5, 3.5].view());
    }
}
