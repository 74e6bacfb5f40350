pub mod batches;
pub mod dataset;
pub mod idx;
pub mod split;

pub use batches::{batch_iterator, gather_batch, Batch};
pub use dataset::{assemble_multiscript, load_grid_dataset, read_grid_meta, Dataset, GridTaskSpec};
pub use idx::{read_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use split::{stratified_split, SplitIndices};
