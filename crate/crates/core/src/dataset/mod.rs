//! Multi-view datasets with per-sample view availability.
//!
//! A [`MultiViewDataset`] holds one feature matrix per view, the class labels
//! and an `N × V` availability mask. The mask is the only source of truth for
//! which entries exist: values stored in unobserved slots are placeholders and
//! are never read.

mod io;
mod mask;
mod normalize;
mod split;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use io::{write_atomic, write_matrix};
#[cfg(test)]
pub(crate) use io::read_matrix;
pub use io::{load_dataset, read_mask, save_dataset, write_mask};
pub use mask::{generate_missing_mask, MissingnessSpec};
pub use normalize::{zscore_fit_transform, ViewStats, ZScoreStats, DEGENERATE_STD};
pub use split::{split, split_indices, SplitSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewDataset {
    views: Vec<Array2<f64>>,
    labels: Vec<usize>,
    mask: Array2<bool>,
    class_count: usize,
}

impl MultiViewDataset {
    /// Build a dataset whose class count is inferred from the labels, which
    /// must cover `0..K` without gaps. A missing mask means every view is
    /// observed.
    pub fn new(
        views: Vec<Array2<f64>>,
        labels: Vec<usize>,
        mask: Option<Array2<bool>>,
    ) -> Result<Self> {
        let class_count = labels.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; class_count];
        for &y in &labels {
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidDataset(format!(
                "labels do not cover 0..{class_count}: class {missing} is absent"
            )));
        }
        Self::with_class_count(views, labels, mask, class_count)
    }

    /// Build a dataset with an explicit class count; used for subsets that
    /// need not contain every class.
    pub fn with_class_count(
        views: Vec<Array2<f64>>,
        labels: Vec<usize>,
        mask: Option<Array2<bool>>,
        class_count: usize,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidDataset("no views".into()));
        }
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no samples".into()));
        }
        for (v, view) in views.iter().enumerate() {
            if view.nrows() != n {
                return Err(Error::InvalidDataset(format!(
                    "view {v} has {} rows but there are {n} labels",
                    view.nrows()
                )));
            }
            if view.ncols() == 0 {
                return Err(Error::InvalidDataset(format!("view {v} has no features")));
            }
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(Error::InvalidDataset(format!(
                "label {y} of sample {i} is outside [0, {class_count})"
            )));
        }
        let mask = mask.unwrap_or_else(|| Array2::from_elem((n, views.len()), true));
        if mask.dim() != (n, views.len()) {
            return Err(Error::InvalidDataset(format!(
                "mask is {:?}, expected ({n}, {})",
                mask.dim(),
                views.len()
            )));
        }
        if let Some(i) = mask
            .axis_iter(Axis(0))
            .position(|row| !row.iter().any(|&m| m))
        {
            return Err(Error::InvalidDataset(format!(
                "sample with zero observed views (row {i})"
            )));
        }
        for (v, view) in views.iter().enumerate() {
            for (i, row) in view.axis_iter(Axis(0)).enumerate() {
                if mask[[i, v]] && row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidDataset(format!(
                        "non-finite observed value in view {v}, row {i}"
                    )));
                }
            }
        }
        Ok(Self {
            views,
            labels,
            mask,
            class_count,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn views(&self) -> &[Array2<f64>] {
        &self.views
    }

    pub fn view(&self, v: usize) -> ArrayView2<'_, f64> {
        self.views[v].view()
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_observed(&self, sample: usize, view: usize) -> bool {
        self.mask[[sample, view]]
    }

    /// Feature row of `view` for `sample`. Only meaningful when observed.
    pub fn row(&self, sample: usize, view: usize) -> ArrayView1<'_, f64> {
        self.views[view].row(sample)
    }

    pub fn observed_views(&self, sample: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_views()).filter(move |&v| self.mask[[sample, v]])
    }

    pub fn missing_views(&self, sample: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_views()).filter(move |&v| !self.mask[[sample, v]])
    }

    pub fn is_complete(&self, sample: usize) -> bool {
        self.mask.row(sample).iter().all(|&m| m)
    }

    /// Fraction of unobserved (sample, view) slots.
    pub fn missing_rate(&self) -> f64 {
        let missing = self.mask.iter().filter(|&&m| !m).count();
        missing as f64 / self.mask.len() as f64
    }

    /// Replace the availability mask.
    pub fn with_mask(&self, mask: Array2<bool>) -> Result<Self> {
        Self::with_class_count(
            self.views.clone(),
            self.labels.clone(),
            Some(mask),
            self.class_count,
        )
    }

    /// Same samples with different feature values (shapes must match).
    pub(crate) fn with_views(&self, views: Vec<Array2<f64>>) -> Self {
        debug_assert_eq!(views.len(), self.views.len());
        Self {
            views,
            labels: self.labels.clone(),
            mask: self.mask.clone(),
            class_count: self.class_count,
        }
    }

    /// Subset of rows, in the given order. The class count is inherited.
    /// Copy with every unobserved entry set to zero.
    pub fn zero_unobserved(&self) -> Self {
        let mut views = self.views.clone();
        for (v, view) in views.iter_mut().enumerate() {
            for (n, mut row) in view.rows_mut().into_iter().enumerate() {
                if !self.mask[[n, v]] {
                    row.fill(0.0);
                }
            }
        }
        self.with_views(views)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            views: self
                .views
                .iter()
                .map(|v| v.select(Axis(0), indices))
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            mask: self.mask.select(Axis(0), indices),
            class_count: self.class_count,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn toy() -> MultiViewDataset {
        MultiViewDataset::new(
            vec![
                array![[0.0, 1.0], [1.0, 1.0], [2.0, 0.0], [3.0, 3.0]],
                array![[5.0], [6.0], [7.0], [8.0]],
            ],
            vec![0, 1, 0, 1],
            None,
        )
        .unwrap()
    }

    #[test]
    fn complete_by_default() {
        let d = toy();
        assert_eq!((d.n_samples(), d.n_views(), d.class_count()), (4, 2, 2));
        assert!(d.mask().iter().all(|&m| m));
        assert_eq!(d.missing_rate(), 0.0);
    }

    #[test]
    fn rejects_empty_mask_row() {
        let mask = array![[true, true], [false, false], [true, false], [false, true]];
        let err = toy().with_mask(mask).unwrap_err();
        assert!(err.to_string().contains("sample with zero observed views"), "{err}");
    }

    #[test]
    fn non_finite_values_only_matter_when_observed() {
        let views = vec![array![[0.0], [f64::NAN]], array![[1.0], [2.0]]];
        let err = MultiViewDataset::new(views.clone(), vec![0, 1], None).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
        let mask = array![[true, true], [false, true]];
        assert!(MultiViewDataset::new(views, vec![0, 1], Some(mask)).is_ok());
    }

    #[test]
    fn rejects_gapped_labels() {
        let err = MultiViewDataset::new(vec![array![[0.0], [1.0]]], vec![0, 2], None).unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));
    }

    #[test]
    fn rejects_row_mismatch() {
        let err = MultiViewDataset::new(
            vec![array![[0.0], [1.0]], array![[0.0]]],
            vec![0, 1],
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("view 1 has 1 rows"), "{err}");
    }

    #[test]
    fn select_keeps_class_count() {
        let d = toy().select(&[1, 3]);
        assert_eq!(d.labels(), &[1, 1]);
        assert_eq!(d.class_count(), 2);
        assert_eq!(d.row(0, 1)[0], 6.0);
    }
}
