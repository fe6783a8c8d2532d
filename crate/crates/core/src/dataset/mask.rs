use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Target missing rate η (fraction of unobserved sample-view slots) and the
/// seed of the draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub eta: f64,
    pub seed: u64,
}

impl MissingnessSpec {
    pub fn new(eta: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidConfig(format!(
                "missing rate {eta} is outside [0, 1)"
            )));
        }
        Ok(Self { eta, seed })
    }

    /// round(η · N · V)
    pub fn missing_slots(&self, n: usize, v: usize) -> usize {
        (self.eta * (n * v) as f64).round() as usize
    }
}

/// Draw an `n × v` availability mask with exactly round(η·n·v) missing
/// slots, keeping at least one observed view per sample.
///
/// Slots are drawn uniformly at random and a draw is rejected when the slot
/// is already missing or the sample would lose its last view.
pub fn generate_missing_mask(n: usize, v: usize, spec: &MissingnessSpec) -> Result<Array2<bool>> {
    MissingnessSpec::new(spec.eta, spec.seed)?;
    let missing = spec.missing_slots(n, v);
    let capacity = n * v.saturating_sub(1);
    if missing > capacity {
        return Err(Error::InfeasibleMask { missing, capacity });
    }
    let mut mask = Array2::from_elem((n, v), true);
    let mut row_missing = vec![0usize; n];
    let mut rng = rng::stream(spec.seed, &[rng::tag::MASK, n as u64, v as u64]);
    let mut placed = 0;
    while placed < missing {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..v);
        if !mask[[i, j]] || row_missing[i] + 1 >= v {
            continue;
        }
        mask[[i, j]] = false;
        row_missing[i] += 1;
        placed += 1;
    }
    Ok(mask)
}
