// Writing and reading IDX dataset files, plus the grid metadata format.

use std::fs;

use mtlgrid::data::{
    load_grid_dataset, read_idx, write_idx_images, write_idx_labels, GridTaskSpec,
};
use mtlgrid::synth::{synth_raw, Difficulty};

fn main() {
    let dir = std::env::temp_dir().join("mtlgrid-idx-demo");
    fs::create_dir_all(&dir).unwrap();

    // a small synthetic single-script set, written as an IDX pair
    let spec = GridTaskSpec::single("Demo", 10);
    let (images, labels) = synth_raw(&spec, 5, 0, Difficulty::Standard);
    let images_path = dir.join("demo-images.idx");
    let labels_path = dir.join("demo-labels.idx");
    write_idx_images(&images_path, &images, labels.len()).unwrap();
    write_idx_labels(&labels_path, &labels).unwrap();

    let (decoded, decoded_labels) = read_idx(&images_path, &labels_path).unwrap();
    println!(
        "decoded {} images of shape {:?}, labels 0..{}",
        decoded.shape()[0],
        &decoded.shape()[1..],
        decoded_labels.iter().max().unwrap()
    );
    let max = decoded.data().iter().cloned().fold(0.0, f64::max);
    println!("pixel range [0, {:.4}]", max);

    // the same pair read through grid metadata (here a 2x5 factorization)
    let meta = dir.join("grid.meta");
    fs::write(&meta, "rows=2\ncols=5\nnames=Upper,Lower\n").unwrap();
    let grid = load_grid_dataset(&images_path, &labels_path, &meta).unwrap();
    println!(
        "as a grid dataset: {} rows x {} cols, {} samples",
        grid.spec.rows,
        grid.spec.cols,
        grid.len()
    );
}
