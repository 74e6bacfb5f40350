//! Balanced stratified train/validation split with seeded shuffling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Per class, round-half-up(val_fraction * n_class) indices go to the
/// validation set, chosen by a seeded shuffle of that class's indices.
pub fn stratified_split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    assert!(val_fraction > 0.0 && val_fraction < 1.0);
    let classes = dataset.spec.classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    if let Some(class) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::EmptyClass { class });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for indices in &mut by_class {
        indices.shuffle(&mut rng);
        // round-half-up
        let n_val = (val_fraction * indices.len() as f64 + 0.5).floor() as usize;
        val.extend_from_slice(&indices[..n_val]);
        train.extend_from_slice(&indices[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val })
}
