use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MultiViewDataset;

/// Features whose standard deviation falls below this are centered only.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewStats {
    pub mean: Vec<f64>,
    /// Population standard deviation (divisor n) over observed rows.
    pub std: Vec<f64>,
}

impl ViewStats {
    fn scale(&self, j: usize) -> f64 {
        if self.std[j] < DEGENERATE_STD {
            1.0
        } else {
            self.std[j]
        }
    }
}

/// Per-view, per-feature standardization fitted on observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub views: Vec<ViewStats>,
}

impl ZScoreStats {
    pub fn fit(data: &MultiViewDataset) -> Self {
        let views = (0..data.n_views())
            .map(|v| {
                let x = data.view(v);
                let rows: Vec<usize> = (0..data.n_samples())
                    .filter(|&i| data.is_observed(i, v))
                    .collect();
                let d = x.ncols();
                if rows.is_empty() {
                    return ViewStats { mean: vec![0.0; d], std: vec![1.0; d] };
                }
                let n = rows.len() as f64;
                let mut mean = vec![0.0; d];
                for &i in &rows {
                    for (m, &val) in mean.iter_mut().zip(x.row(i)) {
                        *m += val;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; d];
                for &i in &rows {
                    for ((s, &val), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                        *s += (val - m) * (val - m);
                    }
                }
                let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
                ViewStats { mean, std }
            })
            .collect();
        Self { views }
    }

    fn map_observed(&self, data: &MultiViewDataset, f: impl Fn(f64, f64, f64) -> f64) -> MultiViewDataset {
        let views = (0..data.n_views())
            .map(|v| {
                let stats = &self.views[v];
                let mut out: Array2<f64> = data.view(v).to_owned();
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    if !data.is_observed(i, v) {
                        continue;
                    }
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = f(*x, stats.mean[j], stats.scale(j));
                    }
                }
                out
            })
            .collect();
        data.with_views(views)
    }

    /// Standardize observed entries; unobserved placeholders pass through.
    pub fn transform(&self, data: &MultiViewDataset) -> MultiViewDataset {
        self.map_observed(data, |x, mean, scale| (x - mean) / scale)
    }

    pub fn inverse_transform(&self, data: &MultiViewDataset) -> MultiViewDataset {
        self.map_observed(data, |z, mean, scale| z * scale + mean)
    }

    /// Map a standardized value of feature `j` of view `v` back to raw units.
    pub fn inverse_value(&self, v: usize, j: usize, z: f64) -> f64 {
        let stats = &self.views[v];
        z * stats.scale(j) + stats.mean[j]
    }
}

/// Fit on the observed training entries and transform both partitions.
pub fn zscore_fit_transform(
    train: &MultiViewDataset,
    test: &MultiViewDataset,
) -> (MultiViewDataset, MultiViewDataset, ZScoreStats) {
    let stats = ZScoreStats::fit(train);
    (stats.transform(train), stats.transform(test), stats)
}
