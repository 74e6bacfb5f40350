// The auxiliary head after training: its 4x4 confusion against the
// correctness codes realized by the main head's predictions.

use mtlgrid::data::GridTaskSpec;
use mtlgrid::model::Objective;
use mtlgrid::report::aux_head_report;
use mtlgrid::synth::{synth_dataset, Difficulty};
use mtlgrid::train::{run_experiment, RunConfig};

fn main() {
    let spec = GridTaskSpec::multiscript();
    let train = synth_dataset(&spec, 30, 8, Difficulty::Standard);
    let test = synth_dataset(&spec, 8, 9, Difficulty::Standard);

    let mut cfg = RunConfig::new("new", Objective::New, spec);
    cfg.epochs = 4;
    cfg.repeats = 1;
    cfg.seed = 3;

    let out = run_experiment(&cfg, &train, &test, None).unwrap();
    let model = &out.best_models[0];
    let confusion = aux_head_report(model, &test).unwrap();
    println!("aux prediction (rows) vs realized correctness code (cols):");
    println!("        0      1      2      3");
    for (i, row) in confusion.iter().enumerate() {
        println!("{}  {:>5}  {:>5}  {:>5}  {:>5}", i, row[0], row[1], row[2], row[3]);
    }
    let total: usize = confusion.iter().flatten().sum();
    println!("total {} (= test set size)", total);
}
