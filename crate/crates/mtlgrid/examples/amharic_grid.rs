// The 11x7 character-grid configuration: same machinery, different
// factorization. Trains briefly on synthetic data.

use mtlgrid::data::GridTaskSpec;
use mtlgrid::model::Objective;
use mtlgrid::synth::{synth_dataset, Difficulty};
use mtlgrid::train::{run_experiment, RunConfig};

fn main() {
    let spec = GridTaskSpec::amharic();
    println!(
        "{} rows x {} cols = {} classes",
        spec.rows,
        spec.cols,
        spec.classes()
    );
    let train = synth_dataset(&spec, 12, 5, Difficulty::Easy);
    let test = synth_dataset(&spec, 3, 6, Difficulty::Easy);

    let mut cfg = RunConfig::new("wloss", Objective::Wloss, spec);
    cfg.epochs = 3;
    cfg.repeats = 1;
    cfg.seed = 2;
    cfg.sigma1 = 0.65;
    cfg.sigma2 = 0.35;

    let out = run_experiment(&cfg, &train, &test, None).unwrap();
    let test_row = &out.record.test_rows()[0];
    println!(
        "test accuracy {:.2}% after {} epochs (best epoch {})",
        test_row.metrics.acc_overall, cfg.epochs, test_row.epoch
    );
}
