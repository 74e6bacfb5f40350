// Checkpoint save/load round trip.

use mtlgrid::data::GridTaskSpec;
use mtlgrid::model::{build_model, MtlModel, Objective};

fn main() {
    let dir = std::env::temp_dir().join("mtlgrid-ckpt-demo");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.ckpt");

    let model = build_model(&GridTaskSpec::multiscript(), Objective::New, 42);
    model.save_checkpoint(&path).unwrap();
    println!(
        "saved {} parameters ({} bytes)",
        model.param_count(),
        std::fs::metadata(&path).unwrap().len()
    );

    let loaded = MtlModel::load_checkpoint(&path).unwrap();
    let identical = model
        .parameters()
        .iter()
        .zip(loaded.parameters())
        .all(|(a, b)| a.data() == b.data());
    println!(
        "reloaded: objective {}, grid {}x{}, bitwise identical: {}",
        loaded.objective.name(),
        loaded.spec.rows,
        loaded.spec.cols,
        identical
    );
}
