//! Per-class labeled subsets for the semi-supervised protocol.
//!
//! Each class pool is shuffled once with a seed derived from the run seed and
//! the class index; a fraction takes a prefix of that shuffle. Larger
//! fractions therefore always contain the smaller ones.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::rng::{derive_indexed, Rng};
use crate::skeleton_data::DatasetManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSubset {
    /// Selected sample indices per class, in draw order.
    pub per_class: Vec<Vec<usize>>,
    pub fraction: f64,
    pub seed: u64,
}

impl LabeledSubset {
    /// All selected indices, ascending.
    pub fn ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.per_class.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `floor(fraction * pool)`, but at least one sample. The small epsilon keeps
/// products like `0.05 * 660` from landing a hair under an integer.
pub fn labeled_count(pool: usize, fraction: f64) -> usize {
    (((fraction * pool as f64) + 1e-9).floor() as usize).clamp(1, pool)
}

pub fn sample_from_pools(pools: &[Vec<usize>], fraction: f64, seed: u64) -> Result<LabeledSubset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labeled fraction {fraction} outside (0, 1]")));
    }
    let mut per_class = Vec::with_capacity(pools.len());
    for (c, pool) in pools.iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::EmptyClass(c));
        }
        let mut shuffled = pool.clone();
        let mut rng = Rng::seed_from_u64(derive_indexed(seed, "subset/class", c as u64));
        shuffled.shuffle(&mut rng);
        shuffled.truncate(labeled_count(pool.len(), fraction));
        per_class.push(shuffled);
    }
    Ok(LabeledSubset {
        per_class,
        fraction,
        seed,
    })
}

/// Samples manifest entry indices.
pub fn sample_labeled_subset(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<LabeledSubset> {
    sample_from_pools(&manifest.class_pools(), fraction, seed)
}
