//! Seeded mini-batch iteration. The shuffle key is (seed, epoch), so the
//! same epoch of the same run always yields the same batch order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tasks::decompose_label;
use crate::tensor::Tensor;

use super::dataset::Dataset;

/// One optimizer step's worth of data, with row/column labels derived
/// from the main labels up front.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn shuffled_indices(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = indices.to_vec();
    order.shuffle(&mut rng);
    order
}

pub fn gather_batch(dataset: &Dataset, indices: &[usize]) -> Batch {
    let plane = 28 * 28;
    let mut images = Vec::with_capacity(indices.len() * plane);
    let mut labels = Vec::with_capacity(indices.len());
    let mut row_labels = Vec::with_capacity(indices.len());
    let mut col_labels = Vec::with_capacity(indices.len());
    let src = dataset.images.data();
    for &i in indices {
        images.extend_from_slice(&src[i * plane..(i + 1) * plane]);
        let label = dataset.labels[i];
        let (row, col) = decompose_label(label, dataset.spec.rows, dataset.spec.cols)
            .expect("dataset labels validated at construction");
        labels.push(label);
        row_labels.push(row);
        col_labels.push(col);
    }
    let images = Tensor::from_vec(&[indices.len(), 1, 28, 28], images).unwrap();
    Batch {
        images,
        labels,
        row_labels,
        col_labels,
    }
}

/// All full batches plus one final partial batch if needed.
pub fn batch_iterator<'a>(
    dataset: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> impl Iterator<Item = Batch> + 'a {
    assert!(batch_size > 0);
    let order = shuffled_indices(indices, seed, epoch);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    chunks.into_iter().map(move |c| gather_batch(dataset, &c))
}
