use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

fn take_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Disjoint, sorted train and test row indices.
///
/// Stratified splits take round(fraction · n_c) samples of each class,
/// clamped so that every class lands in both partitions.
pub fn split_indices(data: &MultiViewDataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {} is outside (0, 1)",
            spec.train_fraction
        )));
    }
    let n = data.n_samples();
    if n < 2 {
        return Err(Error::InvalidDataset("cannot split fewer than 2 samples".into()));
    }
    let mut rng = rng::stream(spec.seed, &[rng::tag::SPLIT]);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    if spec.stratified {
        for class in 0..data.class_count() {
            let mut members: Vec<usize> = (0..n).filter(|&i| data.labels()[i] == class).collect();
            if members.is_empty() {
                continue;
            }
            if members.len() < 2 {
                return Err(Error::InvalidDataset(format!(
                    "class {class} has {} sample(s); stratified splitting needs at least 2",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            let cut = take_count(spec.train_fraction, members.len());
            train.extend_from_slice(&members[..cut]);
            test.extend_from_slice(&members[cut..]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let cut = take_count(spec.train_fraction, n);
        train.extend_from_slice(&all[..cut]);
        test.extend_from_slice(&all[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(data: &MultiViewDataset, spec: &SplitSpec) -> Result<(MultiViewDataset, MultiViewDataset)> {
    let (train, test) = split_indices(data, spec)?;
    Ok((data.select(&train), data.select(&test)))
}
