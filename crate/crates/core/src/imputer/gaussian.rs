use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest jitter tried when a covariance refuses to factor.
pub const MAX_JITTER: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    #[default]
    Full,
    /// Keep only the diagonal of the neighbour covariance.
    Diagonal,
}

/// Neighbour-conditioned Gaussian for one missing view of one sample.
///
/// The covariance is kept implicitly as the centred neighbour rows `D`, so
/// Σ = DᵀD / (|𝕀| − 1) + jitter·I is only materialized on request.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianImputation {
    pub mu: Array1<f64>,
    deviations: Array2<f64>,
    pub jitter: f64,
    pub neighbor_count: usize,
}

impl GaussianImputation {
    /// Mean and unbiased covariance of the neighbour rows. A single neighbour
    /// is treated as a point mass (Σ = jitter·I).
    pub fn estimate(neighbors: ArrayView2<f64>, jitter: f64) -> Result<Self> {
        let count = neighbors.nrows();
        if count == 0 {
            return Err(Error::EmptyNeighbors);
        }
        let mu = neighbors.mean_axis(Axis(0)).expect("non-empty");
        let deviations = &neighbors - &mu;
        Ok(Self { mu, deviations, jitter, neighbor_count: count })
    }

    /// Degenerate Gaussian centred on `mu` with Σ = jitter·I.
    pub fn point_mass(mu: Array1<f64>, jitter: f64) -> Self {
        let deviations = Array2::zeros((1, mu.len()));
        Self { mu, deviations, jitter, neighbor_count: 1 }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Σ without jitter.
    pub fn sample_covariance(&self) -> Array2<f64> {
        if self.neighbor_count < 2 {
            return Array2::zeros((self.dim(), self.dim()));
        }
        self.deviations.t().dot(&self.deviations) / (self.neighbor_count - 1) as f64
    }

    /// Σ + jitter·I.
    pub fn covariance(&self) -> Array2<f64> {
        let mut sigma = self.sample_covariance();
        sigma.diag_mut().mapv_inplace(|x| x + self.jitter);
        sigma
    }

    /// Build a sampler for N(μ, Σ + jitter·I), or its diagonal.
    ///
    /// Full covariances with fewer neighbours than dimensions are sampled as
    /// μ + Dᵀz/√(|𝕀|−1) + √jitter·z′, which has exactly this covariance and
    /// avoids a d×d factorization. Otherwise the Cholesky factor is used and
    /// the jitter is raised tenfold until it factors or exceeds [`MAX_JITTER`].
    pub fn sampler(&self, mode: CovarianceMode) -> Result<GaussianSampler> {
        let d = self.dim();
        if self.neighbor_count < 2 {
            return Ok(GaussianSampler {
                mu: self.mu.clone(),
                factor: Factor::Diagonal(Array1::from_elem(d, self.jitter.sqrt())),
                jitter: self.jitter,
            });
        }
        let scale = 1.0 / ((self.neighbor_count - 1) as f64).sqrt();
        match mode {
            CovarianceMode::Diagonal => {
                let var = self.deviations.mapv(|x| x * x).sum_axis(Axis(0)) * (scale * scale);
                Ok(GaussianSampler {
                    mu: self.mu.clone(),
                    factor: Factor::Diagonal(var.mapv(|v| (v + self.jitter).sqrt())),
                    jitter: self.jitter,
                })
            }
            CovarianceMode::Full if self.neighbor_count - 1 < d => Ok(GaussianSampler {
                mu: self.mu.clone(),
                factor: Factor::LowRank {
                    rows: &self.deviations * scale,
                    noise: self.jitter.sqrt(),
                },
                jitter: self.jitter,
            }),
            CovarianceMode::Full => {
                let sigma = self.sample_covariance();
                let mut jitter = self.jitter;
                loop {
                    let m = DMatrix::from_fn(d, d, |i, j| {
                        sigma[[i, j]] + if i == j { jitter } else { 0.0 }
                    });
                    if let Some(chol) = m.cholesky() {
                        let l = chol.l();
                        let lower = Array2::from_shape_fn((d, d), |(i, j)| l[(i, j)]);
                        return Ok(GaussianSampler {
                            mu: self.mu.clone(),
                            factor: Factor::Cholesky(lower),
                            jitter,
                        });
                    }
                    jitter = if jitter == 0.0 { 1e-6 } else { jitter * 10.0 };
                    if jitter > MAX_JITTER * (1.0 + 1e-9) {
                        return Err(Error::NotPositiveDefinite { jitter });
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Factor {
    /// Per-coordinate standard deviations.
    Diagonal(Array1<f64>),
    /// Σ = rowsᵀ rows + noise²·I.
    LowRank { rows: Array2<f64>, noise: f64 },
    /// Σ + jitter·I = L Lᵀ.
    Cholesky(Array2<f64>),
}

/// Draws from a fixed Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSampler {
    mu: Array1<f64>,
    factor: Factor,
    /// Jitter actually on the diagonal (after any escalation).
    pub jitter: f64,
}

impl GaussianSampler {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Array1<f64> {
        let d = self.mu.len();
        let mut normal = |n: usize| -> Array1<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        match &self.factor {
            Factor::Diagonal(std) => &self.mu + &(normal(d) * std),
            Factor::LowRank { rows, noise } => {
                let z = normal(rows.nrows());
                let mut x = &self.mu + &rows.t().dot(&z);
                if *noise > 0.0 {
                    x += &(normal(d) * *noise);
                }
                x
            }
            Factor::Cholesky(l) => &self.mu + &l.dot(&normal(d)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_neighbors() {
        let g = GaussianImputation::estimate(array![[0.0, 0.0], [2.0, 2.0]].view(), 0.0).unwrap();
        assert_eq!(g.mu, array![1.0, 1.0]);
        assert_eq!(g.covariance(), array![[2.0, 2.0], [2.0, 2.0]]);
    }

    #[test]
    fn single_neighbor_is_point_mass() {
        let g = GaussianImputation::estimate(array![[5.0]].view(), 1e-3).unwrap();
        assert_eq!(g.mu, array![5.0]);
        assert_eq!(g.covariance(), array![[1e-3]]);
    }

    #[test]
    fn identical_neighbors_keep_only_jitter() {
        let g = GaussianImputation::estimate(array![[1.0], [1.0], [1.0]].view(), 1e-3).unwrap();
        assert_eq!(g.mu, array![1.0]);
        assert_eq!(g.covariance(), array![[1e-3]]);
    }

    #[test]
    fn empty_neighbors_fail() {
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            GaussianImputation::estimate(empty.view(), 1e-3),
            Err(Error::EmptyNeighbors)
        ));
    }

    #[test]
    fn zero_covariance_draws_the_mean() {
        let g = GaussianImputation::estimate(array![[1.0, 2.0], [1.0, 2.0]].view(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
            let s = g.sampler(mode).unwrap();
            for _ in 0..10 {
                assert_eq!(s.draw(&mut rng), array![1.0, 2.0]);
            }
        }
    }

    #[test]
    fn singular_covariance_escalates_jitter() {
        // Three collinear neighbours in 2-D: full-rank route, singular Σ.
        let g = GaussianImputation::estimate(array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]].view(), 0.0)
            .unwrap();
        let s = g.sampler(CovarianceMode::Full).unwrap();
        assert!(s.jitter > 0.0);
        assert!(matches!(s.factor, Factor::Cholesky(_)));
    }
}
