// Train the factored-loss model on a small synthetic multi-script corpus
// and print its score-table row. Takes about a minute.

use mtlgrid::data::GridTaskSpec;
use mtlgrid::model::Objective;
use mtlgrid::report::score_row;
use mtlgrid::synth::{synth_dataset, Difficulty};
use mtlgrid::train::{run_experiment, RunConfig};

fn main() {
    let spec = GridTaskSpec::multiscript();
    let train = synth_dataset(&spec, 40, 1, Difficulty::Standard);
    let test = synth_dataset(&spec, 10, 2, Difficulty::Standard);

    let mut cfg = RunConfig::new("new", Objective::New, spec);
    cfg.epochs = 5;
    cfg.repeats = 1;
    cfg.seed = 0;

    let out = run_experiment(&cfg, &train, &test, None).unwrap();
    for row in &out.record.rows {
        if row.split == "val" {
            println!(
                "epoch {:>2}: val acc {:.2}%  main loss {:.4}  factor {:.3}",
                row.epoch,
                row.metrics.acc_overall,
                row.metrics.loss_main,
                row.metrics.factor_mean.unwrap()
            );
        }
    }
    let score = score_row(&out.record);
    println!(
        "test: per-script {:?}  average {:?}  range {:?}",
        score.per_script, score.average, score.range
    );
}
