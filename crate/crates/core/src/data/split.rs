use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::rng::{seeded, stream};

use super::dataset::SpectralDataset;

/// Stratified training-to-testing ratio split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub tttr: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// Training count for a class of `size`: `max(1, round(tttr * size))`, capped at `size`.
    pub fn train_count(&self, size: usize) -> usize {
        ((self.tttr * size as f64).round() as usize).max(1).min(size)
    }
}

/// Per-class seeded shuffle, first `train_count` to train, rest to test.
/// Both halves keep the original sample order.
pub fn split_tttr(ds: &SpectralDataset, spec: SplitSpec) -> Result<(SpectralDataset, SpectralDataset)> {
    if !(spec.tttr > 0.0 && spec.tttr < 1.0) {
        return Err(contract(format!("tttr must lie in (0, 1), got {}", spec.tttr)));
    }
    let mut rng = seeded(spec.seed, stream::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for j in 0..ds.classes() {
        let mut idx = ds.indices_of(j);
        idx.shuffle(&mut rng);
        let k = spec.train_count(idx.len());
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}
